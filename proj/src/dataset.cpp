// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/error.hpp"
#include "exnerf/io.hpp"
#include "exnerf/synth.hpp"

namespace exnerf {

OracleDataset load_dataset(const std::filesystem::path &dir) {
  const nlohmann::json meta = read_json(dir / "meta.json");
  OracleDataset ds;
  try {
    if (meta.value("format", std::string()) != "exnerf-dataset")
      throw UnsupportedFormat("'" + (dir / "meta.json").string() + "' is not an exnerf dataset manifest");
    ds.scene = meta.contains("scene") ? SceneConfig::from_json(meta["scene"]) : SceneConfig::standard();
    ds.t_near = meta.at("t_near").get<double>();
    ds.t_far = meta.at("t_far").get<double>();
    ds.mesh = read_obj(dir / meta.value("mesh", std::string("mesh.obj")));
    for (const auto &jf : meta.at("frames")) {
      OracleFrame f;
      f.index = jf.at("index").get<int>();
      f.validation = jf.at("split").get<std::string>() == "val";
      f.beta = jf.at("beta").get<std::vector<double>>();
      if (static_cast<int>(f.beta.size()) != kBetaDim)
        throw InvalidArgument("dataset frame " + std::to_string(f.index) + ": beta must have 50 entries");
      f.camera = camera_from_json(jf.at("camera"));
      f.image = read_png_rgb(dir / jf.at("image").get<std::string>());
      f.mask = read_mask_png(dir / jf.at("mask").get<std::string>());
      if (f.image.width != f.camera.width || f.image.height != f.camera.height || f.mask.width != f.camera.width ||
          f.mask.height != f.camera.height)
        throw InvalidArgument("dataset frame " + std::to_string(f.index) + ": image size does not match its camera");
      ds.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument("'" + (dir / "meta.json").string() + "': " + e.what());
  }
  for (std::size_t i = 0; i < ds.frames.size(); ++i)
    if (ds.frames[i].index != static_cast<int>(i)) throw InvalidArgument("dataset frames must be listed in order 0..F-1");
  if (ds.frames.empty()) throw InvalidArgument("dataset has no frames");
  return ds;
}

}  // namespace exnerf
