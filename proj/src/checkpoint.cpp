// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>

#include "exnerf/error.hpp"
#include "exnerf/io.hpp"

namespace exnerf {

namespace {

constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_u32(std::string &out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

void append_floats(std::string &out, std::span<const float> values) {
  const auto *p = reinterpret_cast<const char *>(values.data());
  out.append(p, p + values.size() * sizeof(float));
}

struct Parsed {
  nlohmann::json header;
  std::vector<std::vector<float>> payloads;
};

Parsed parse(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint '" + path.string() + "'";
  if (bytes.size() < 8) throw IoError(where + " is truncated");
  if (bytes.compare(0, 8, kCheckpointMagic) != 0) throw UnsupportedFormat(where + ": bad magic bytes");
  if (bytes.size() < 12) throw IoError(where + " is truncated");
  std::uint32_t len = 0;
  for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + k])) << (8 * k);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw IoError(where + " is truncated (header)");
  Parsed p;
  try {
    p.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception &e) {
    throw UnsupportedFormat(where + ": unreadable header: " + e.what());
  }
  if (p.header.value("format", std::string()) != "exnerf-checkpoint" || p.header.value("version", 0) != kVersion)
    throw UnsupportedFormat(where + ": unsupported format or version");
  std::size_t offset = 12 + len;
  for (const auto &t : p.header.at("tensors")) {
    std::size_t n = 1;
    for (int d : t.at("shape").get<std::vector<int>>()) {
      if (d < 0) throw UnsupportedFormat(where + ": negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    if (bytes.size() < offset + n * sizeof(float)) throw IoError(where + " is truncated (payload)");
    std::vector<float> v(n);
    std::memcpy(v.data(), bytes.data() + offset, n * sizeof(float));
    offset += n * sizeof(float);
    p.payloads.push_back(std::move(v));
  }
  if (offset != bytes.size()) throw IoError(where + " has trailing bytes");
  return p;
}

}  // namespace

void save_checkpoint(const TrainState &state, const std::filesystem::path &path, bool include_optimizer) {
  if (!state.model) throw InvalidArgument("save_checkpoint: state has no model");
  const auto &params = state.model->parameters();
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::span<const float>> payloads;
  for (const auto &p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.shape}});
    payloads.push_back(p.values);
  }
  const bool with_adam = include_optimizer && state.adam.first_moment.size() == params.count();
  if (with_adam) {
    std::size_t i = 0;
    for (const auto &p : params) {
      tensors.push_back({{"name", "adam.m/" + p.name}, {"shape", p.shape}});
      payloads.push_back(state.adam.first_moment[i++]);
    }
    i = 0;
    for (const auto &p : params) {
      tensors.push_back({{"name", "adam.v/" + p.name}, {"shape", p.shape}});
      payloads.push_back(state.adam.second_moment[i++]);
    }
  }
  nlohmann::json header = {{"format", "exnerf-checkpoint"},
                           {"version", kVersion},
                           {"dtype", "float32-le"},
                           {"iteration", state.iteration},
                           {"adam_step", state.adam.step},
                           {"optimizer_state", with_adam},
                           {"frames", state.model->frames()},
                           {"running_photometric", state.running_photometric},
                           {"rng", {{"generator", "splitmix64-counter"},
                                    {"seed", state.config.seed},
                                    {"next_iteration", state.iteration}}},
                           {"train_config", state.config.to_json()},
                           {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 8);
  append_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto &v : payloads) append_floats(out, v);
  write_text_atomic(path, out);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path &path) {
  try {
    return parse(path).header;
  } catch (const nlohmann::json::exception &e) {
    throw UnsupportedFormat("checkpoint '" + path.string() + "': malformed header: " + e.what());
  }
}

namespace {

TrainState build_state(const std::filesystem::path &path, Parsed &p) {
  const auto &h = p.header;
  const std::string where = "checkpoint '" + path.string() + "'";
  TrainConfig cfg = TrainConfig::from_json(h.at("train_config"));
  TrainState s = make_train_state(cfg, h.at("frames").get<int>());
  auto &params = s.model->parameters();
  const bool with_adam = h.at("optimizer_state").get<bool>();
  const std::size_t expected = params.count() * (with_adam ? 3 : 1);
  const auto &tensors = h.at("tensors");
  if (tensors.size() != expected) throw UnsupportedFormat(where + ": tensor list does not match the model layout");
  std::size_t i = 0;
  auto check = [&](const ParameterTensor<float> &param, const std::string &name) {
    const auto &t = tensors[i];
    if (t.at("name").get<std::string>() != name || t.at("shape").get<std::vector<int>>() != param.shape)
      throw UnsupportedFormat(where + ": expected tensor '" + name + "', found '" + t.at("name").get<std::string>() + "'");
  };
  for (const auto &param : params) check(param, param.name), ++i;
  if (with_adam) {
    for (const auto &param : params) check(param, "adam.m/" + param.name), ++i;
    for (const auto &param : params) check(param, "adam.v/" + param.name), ++i;
  }
  i = 0;
  for (auto &param : params) {
    param.values.assign(p.payloads[i].begin(), p.payloads[i].end());
    ++i;
  }
  if (with_adam) {
    for (std::size_t k = 0; k < params.count(); ++k) s.adam.first_moment[k] = std::move(p.payloads[i++]);
    for (std::size_t k = 0; k < params.count(); ++k) s.adam.second_moment[k] = std::move(p.payloads[i++]);
    s.adam.step = h.at("adam_step").get<std::int64_t>();
  }
  s.iteration = h.at("iteration").get<std::int64_t>();
  s.running_photometric = h.value("running_photometric", 0.0);
  return s;
}

}  // namespace

TrainState load_checkpoint(const std::filesystem::path &path) {
  try {
    Parsed p = parse(path);
    return build_state(path, p);
  } catch (const nlohmann::json::exception &e) {
    throw UnsupportedFormat("checkpoint '" + path.string() + "': malformed header: " + e.what());
  }
}

}  // namespace exnerf
