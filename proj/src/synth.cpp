// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <thread>

#include "exnerf/error.hpp"
#include "exnerf/io.hpp"
#include "exnerf/rng.hpp"

namespace exnerf {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double smoothstep01(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// +1 / -1 alternating unit tiles with C1 transitions of half-width b around
// every integer.
double smooth_square_wave(double t, double b) {
  const double cell = std::floor(t);
  const double q = t - cell;
  const double cur = (static_cast<long long>(cell) % 2 == 0) ? 1.0 : -1.0;
  if (q < b) return -cur + 2.0 * cur * smoothstep01((q + b) / (2.0 * b));
  if (q > 1.0 - b) return cur - 2.0 * cur * smoothstep01((q - (1.0 - b)) / (2.0 * b));
  return cur;
}

std::array<double, 3> to_array(const Vec3 &v) { return {v.x(), v.y(), v.z()}; }
Vec3 to_vec(const nlohmann::json &j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

std::string frame_name(const char *dir, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s/frame_%04d.png", dir, i);
  return buf;
}

}  // namespace

SceneConfig SceneConfig::standard() {
  SceneConfig c;
  c.geometry_gain.assign(kBetaDim, 0.0);
  c.geometry_gain[0] = 0.06;
  c.geometry_gain[1] = -0.04;
  c.color_gain.assign(kBetaDim, {0.0, 0.0, 0.0});
  c.color_gain[0] = {0.15, -0.05, -0.05};
  c.color_gain[1] = {-0.05, 0.12, 0.0};
  c.color_gain[2] = {0.0, -0.05, 0.15};
  c.color_gain[3] = {0.1, 0.1, 0.1};
  return c;
}

void SceneConfig::validate() const {
  if (static_cast<int>(geometry_gain.size()) != kBetaDim || static_cast<int>(color_gain.size()) != kBetaDim)
    throw InvalidArgument("scene: gains must have 50 entries");
  if (!(head_radius > 0) || !(density_scale > 0) || !(shell_width > 0))
    throw InvalidArgument("scene: head radius, density and shell width must be positive");
  if (!(mouth_inner >= 0) || !(mouth_outer > mouth_inner)) throw InvalidArgument("scene: bad mouth patch angles");
  if (mouth_axis.norm() < 1e-9) throw InvalidArgument("scene: mouth axis must be non-zero");
  if (frames < 1 || width < 1 || height < 1 || !(focal > 0)) throw InvalidArgument("scene: bad image setup");
  if (!(t_far > t_near) || !(t_near > 0)) throw InvalidArgument("scene: need 0 < t_near < t_far");
  if (signal_components < 0 || signal_components > kBetaDim) throw InvalidArgument("scene: bad signal count");
  if (validation_stride < 2) throw InvalidArgument("scene: validation stride must be at least 2");
  if (!(tile_size > 0) || !(tile_blend > 0 && tile_blend < 0.5)) throw InvalidArgument("scene: bad tile setup");
  if (!(plane_ramp > 0) || !(plane_density > 0)) throw InvalidArgument("scene: bad plane setup");
  double shrink = 0;
  for (int k = 0; k < kBetaDim; ++k)
    shrink += std::abs(geometry_gain[k]) * (k < signal_components ? signal_range : nuisance_range);
  if (head_radius - shrink <= 0) throw InvalidArgument("scene: beta range allows a non-positive radius");
  if (orbit_radius <= max_radius() + mesh_margin)
    throw InvalidArgument("scene: camera orbit intersects the head");
}

double SceneConfig::max_radius() const {
  double r = head_radius;
  for (int k = 0; k < static_cast<int>(geometry_gain.size()); ++k)
    r += std::abs(geometry_gain[k]) * (k < signal_components ? signal_range : nuisance_range);
  return r;
}

std::array<double, 2> SceneConfig::jitter(int t_frame) const {
  CounterRng rng(seed, 0x7177E5, static_cast<std::uint64_t>(t_frame));
  const double a = rng.uniform(-jitter_amplitude, jitter_amplitude);
  const double b = rng.uniform(-jitter_amplitude, jitter_amplitude);
  return {a, b};
}

Camera SceneConfig::orbit_camera(double azimuth_deg, double elev_deg) const {
  const double az = azimuth_deg * kDeg;
  const double el = elev_deg * kDeg;
  const Vec3 eye = head_center + orbit_radius * Vec3(std::cos(el) * std::sin(az), std::sin(el),
                                                     std::cos(el) * std::cos(az));
  return look_at_camera(width, height, focal, focal, eye, head_center, Vec3::UnitY());
}

Camera SceneConfig::frame_camera(int frame) const {
  if (frame < 0 || frame >= frames) throw InvalidArgument("scene: frame out of range");
  const double s = frames > 1 ? static_cast<double>(frame) / (frames - 1) : 0.5;
  return orbit_camera(azimuth_start_deg + s * (azimuth_end_deg - azimuth_start_deg), elevation_deg);
}

std::vector<double> SceneConfig::frame_beta(int frame) const {
  CounterRng rng(seed, 0xBE7A, static_cast<std::uint64_t>(frame));
  std::vector<double> beta(kBetaDim);
  for (int k = 0; k < kBetaDim; ++k) {
    const double r = k < signal_components ? signal_range : nuisance_range;
    beta[k] = rng.uniform(-r, r);
  }
  return beta;
}

nlohmann::json SceneConfig::to_json() const {
  nlohmann::json j;
  j["head_center"] = to_array(head_center);
  j["head_radius"] = head_radius;
  j["density_scale"] = density_scale;
  j["shell_width"] = shell_width;
  j["mouth_axis"] = to_array(mouth_axis);
  j["mouth_inner"] = mouth_inner;
  j["mouth_outer"] = mouth_outer;
  j["geometry_gain"] = geometry_gain;
  j["color_gain"] = color_gain;
  j["head_color"] = head_color;
  j["mouth_color"] = mouth_color;
  j["patch_color_limit"] = patch_color_limit;
  j["plane_z"] = plane_z;
  j["plane_density"] = plane_density;
  j["plane_ramp"] = plane_ramp;
  j["tile_size"] = tile_size;
  j["tile_blend"] = tile_blend;
  j["tile_a"] = tile_a;
  j["tile_b"] = tile_b;
  j["jitter_amplitude"] = jitter_amplitude;
  j["frames"] = frames;
  j["width"] = width;
  j["height"] = height;
  j["focal"] = focal;
  j["orbit_radius"] = orbit_radius;
  j["elevation_deg"] = elevation_deg;
  j["azimuth_start_deg"] = azimuth_start_deg;
  j["azimuth_end_deg"] = azimuth_end_deg;
  j["t_near"] = t_near;
  j["t_far"] = t_far;
  j["signal_components"] = signal_components;
  j["signal_range"] = signal_range;
  j["nuisance_range"] = nuisance_range;
  j["validation_stride"] = validation_stride;
  j["mesh_margin"] = mesh_margin;
  j["seed"] = seed;
  return j;
}

SceneConfig SceneConfig::from_json(const nlohmann::json &j) {
  SceneConfig c = standard();
  try {
    if (j.contains("head_center")) c.head_center = to_vec(j["head_center"]);
    if (j.contains("mouth_axis")) c.mouth_axis = to_vec(j["mouth_axis"]);
    auto get = [&](const char *key, auto &field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("head_radius", c.head_radius);
    get("density_scale", c.density_scale);
    get("shell_width", c.shell_width);
    get("mouth_inner", c.mouth_inner);
    get("mouth_outer", c.mouth_outer);
    get("geometry_gain", c.geometry_gain);
    get("color_gain", c.color_gain);
    get("head_color", c.head_color);
    get("mouth_color", c.mouth_color);
    get("patch_color_limit", c.patch_color_limit);
    get("plane_z", c.plane_z);
    get("plane_density", c.plane_density);
    get("plane_ramp", c.plane_ramp);
    get("tile_size", c.tile_size);
    get("tile_blend", c.tile_blend);
    get("tile_a", c.tile_a);
    get("tile_b", c.tile_b);
    get("jitter_amplitude", c.jitter_amplitude);
    get("frames", c.frames);
    get("width", c.width);
    get("height", c.height);
    get("focal", c.focal);
    get("orbit_radius", c.orbit_radius);
    get("elevation_deg", c.elevation_deg);
    get("azimuth_start_deg", c.azimuth_start_deg);
    get("azimuth_end_deg", c.azimuth_end_deg);
    get("t_near", c.t_near);
    get("t_far", c.t_far);
    get("signal_components", c.signal_components);
    get("signal_range", c.signal_range);
    get("nuisance_range", c.nuisance_range);
    get("validation_stride", c.validation_stride);
    get("mesh_margin", c.mesh_margin);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

double mouth_weight(const SceneConfig &cfg, const Vec3 &dir) {
  const double c = std::clamp(dir.dot(cfg.mouth_axis.normalized()), -1.0, 1.0);
  const double angle = std::acos(c);
  return 1.0 - smoothstep01((angle - cfg.mouth_inner) / (cfg.mouth_outer - cfg.mouth_inner));
}

double head_radius_at(const SceneConfig &cfg, const Vec3 &dir, std::span<const double> beta) {
  const double w = mouth_weight(cfg, dir);
  if (w == 0.0) return cfg.head_radius;
  double offset = 0;
  for (std::size_t k = 0; k < beta.size() && k < cfg.geometry_gain.size(); ++k) offset += cfg.geometry_gain[k] * beta[k];
  return cfg.head_radius + w * offset;
}

std::array<double, 3> plane_color(const SceneConfig &cfg, const Vec3 &x, int t_frame) {
  const auto j = cfg.jitter(t_frame);
  const double u = (x.x() + j[0]) / cfg.tile_size;
  const double v = (x.y() + j[1]) / cfg.tile_size;
  const double checker = smooth_square_wave(u, cfg.tile_blend) * smooth_square_wave(v, cfg.tile_blend);
  const double s = 0.5 * (1.0 + checker);
  std::array<double, 3> c;
  for (int k = 0; k < 3; ++k) c[k] = cfg.tile_a[k] + s * (cfg.tile_b[k] - cfg.tile_a[k]);
  return c;
}

RadianceSample analytic_scene_eval(const SceneConfig &cfg, const Vec3 &x, const Vec3 &, std::span<const double> beta,
                                   int t_frame) {
  if (static_cast<int>(beta.size()) != kBetaDim) throw InvalidArgument("analytic_scene_eval: beta must have 50 entries");
  RadianceSample out;

  double sigma_head = 0;
  std::array<double, 3> head_rgb{0, 0, 0};
  const Vec3 v = x - cfg.head_center;
  const double dist = v.norm();
  const Vec3 dir = dist > 1e-12 ? Vec3(v / dist) : Vec3(cfg.mouth_axis.normalized());
  // Coarse early-out: beyond every reachable radius the tail is below exp(-30).
  const double z_max = (cfg.max_radius() - dist) / cfg.shell_width;
  if (z_max > -30.0) {
    const double r = head_radius_at(cfg, dir, beta);
    const double z = (r - dist) / cfg.shell_width;
    if (z > -30.0) {
      sigma_head = cfg.density_scale * stable_sigmoid(z);
      const double w = mouth_weight(cfg, dir);
      const Vec3 light = Vec3(0.3, 0.6, 0.74).normalized();
      const double shade = 0.7 + 0.3 * std::max(0.0, dir.dot(light));
      for (int k = 0; k < 3; ++k) {
        double patch = 0;
        for (int i = 0; i < kBetaDim; ++i) patch += cfg.color_gain[i][k] * beta[i];
        patch = std::clamp(patch, -cfg.patch_color_limit, cfg.patch_color_limit);
        const double base = (1.0 - w) * cfg.head_color[k] + w * cfg.mouth_color[k];
        head_rgb[k] = std::clamp(shade * base + w * patch, 0.0, 1.0);
      }
    }
  }

  double sigma_plane = 0;
  std::array<double, 3> plane_rgb{0, 0, 0};
  const double s = (cfg.plane_z - x.z()) / cfg.plane_ramp;
  if (s > 0) {
    sigma_plane = cfg.plane_density * smoothstep01(s);
    plane_rgb = plane_color(cfg, x, t_frame);
  }

  out.sigma = sigma_head + sigma_plane;
  if (out.sigma > 0)
    for (int k = 0; k < 3; ++k) out.color[k] = (sigma_head * head_rgb[k] + sigma_plane * plane_rgb[k]) / out.sigma;
  return out;
}

Image oracle_render(const SceneConfig &cfg, const Camera &camera, std::span<const double> beta, int t_frame,
                    int samples_per_ray) {
  if (samples_per_ray < 2) throw InvalidArgument("oracle_render: need at least 2 samples per ray");
  camera.validate();
  Image img(camera.width, camera.height);
  const auto pixels = all_pixels(camera);
  const auto rays = generate_rays(camera, pixels, cfg.t_near, cfg.t_far);
  std::vector<double> t(samples_per_ray), sigma(samples_per_ray);
  std::vector<std::array<double, 3>> color(samples_per_ray);
  const double step = (cfg.t_far - cfg.t_near) / samples_per_ray;
  for (int j = 0; j < samples_per_ray; ++j) t[j] = cfg.t_near + (j + 0.5) * step;
  for (const Ray &ray : rays) {
    for (int j = 0; j < samples_per_ray; ++j) {
      const RadianceSample s = analytic_scene_eval(cfg, ray.origin + t[j] * ray.direction, ray.direction, beta, t_frame);
      sigma[j] = s.sigma;
      color[j] = s.color;
    }
    const RenderOutput out = composite_ray(t, sigma, color, cfg.t_far, 0.0);
    float *px = img.pixel(ray.pixel.row, ray.pixel.col);
    for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(out.color[k]);
  }
  return img;
}

TriangleMesh proxy_head_mesh(const SceneConfig &cfg) {
  // Icosahedron, subdivided twice and projected onto the unit sphere.
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto &v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < 2; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const int id = static_cast<int>(m.vertices.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto &t : m.triangles) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  double min_plane = 1.0;
  for (const auto &t : m.triangles) {
    const Vec3 &a = m.vertices[t[0]];
    const Vec3 n = (m.vertices[t[1]] - a).cross(m.vertices[t[2]] - a).normalized();
    min_plane = std::min(min_plane, std::abs(n.dot(a)));
  }
  const double scale = (cfg.max_radius() + cfg.mesh_margin) / min_plane;
  for (auto &v : m.vertices) v = cfg.head_center + scale * v;
  m.validate();
  return m;
}

std::vector<int> OracleDataset::training_frames() const {
  std::vector<int> out;
  for (const auto &f : frames)
    if (!f.validation) out.push_back(f.index);
  return out;
}

std::vector<int> OracleDataset::validation_frames() const {
  std::vector<int> out;
  for (const auto &f : frames)
    if (f.validation) out.push_back(f.index);
  return out;
}

OracleDataset generate_dataset(const SceneConfig &cfg, const std::filesystem::path &out_dir, int threads) {
  cfg.validate();
  OracleDataset ds;
  ds.scene = cfg;
  ds.t_near = cfg.t_near;
  ds.t_far = cfg.t_far;
  ds.mesh = proxy_head_mesh(cfg);
  ds.frames.resize(cfg.frames);

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < cfg.frames; i = next++) {
      OracleFrame &f = ds.frames[i];
      f.index = i;
      f.camera = cfg.frame_camera(i);
      f.beta = cfg.frame_beta(i);
      f.validation = cfg.is_validation(i);
      const Image exact = oracle_render(cfg, f.camera, f.beta, i);
      f.image = dequantize(exact.width, exact.height, quantize(exact));
      f.mask = rasterize_silhouette(ds.mesh, f.camera);
    }
  };
  const int n = std::max(1, std::min(threads, cfg.frames));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }

  if (!out_dir.empty()) {
    nlohmann::json meta;
    meta["format"] = "exnerf-dataset";
    meta["version"] = 1;
    meta["width"] = cfg.width;
    meta["height"] = cfg.height;
    meta["t_near"] = cfg.t_near;
    meta["t_far"] = cfg.t_far;
    meta["mesh"] = "mesh.obj";
    meta["split_rule"] = {{"validation_stride", cfg.validation_stride},
                          {"validation_offset", cfg.validation_stride - 1}};
    meta["scene"] = cfg.to_json();
    nlohmann::json frames = nlohmann::json::array();
    for (const auto &f : ds.frames) {
      const std::string image = frame_name("images", f.index);
      const std::string mask = frame_name("masks", f.index);
      write_png_rgb(out_dir / image, f.image);
      write_mask_png(out_dir / mask, f.mask);
      frames.push_back({{"index", f.index},
                        {"split", f.validation ? "val" : "train"},
                        {"image", image},
                        {"mask", mask},
                        {"beta", f.beta},
                        {"camera", camera_to_json(f.camera)}});
    }
    meta["frames"] = frames;
    write_obj(out_dir / "mesh.obj", ds.mesh);
    write_text_atomic(out_dir / "meta.json", meta.dump(1) + "\n");
  }
  return ds;
}

}  // namespace exnerf
