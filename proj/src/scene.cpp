#include "p2b/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "p2b/error.hpp"
#include "p2b/rng.hpp"

namespace p2b {
namespace {

constexpr char kMagic[8] = {'P', '2', 'B', 'S', 'C', 'N', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr int kPlacementRetries = 100;

double round2(double v) { return std::round(v * 100.0) / 100.0 + 0.0; }

// lerp reproduces equal endpoints exactly, so constant regions sample to the
// constant with no rounding residue.
double lerp(double a, double b, double t) { return a + t * (b - a); }

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) {
    throw ParseError("scene sidecar " + path + ": truncated file");
  }
}

}  // namespace

double SceneGrid::sample(double x, double y, int d) const {
  const double fx = x / stride - 0.5;
  const double fy = y / stride - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double tx = fx - x0;
  const double ty = fy - y0;
  const double top = lerp(at(x0, y0, d), at(x0 + 1, y0, d), tx);
  const double bottom = lerp(at(x0, y0 + 1, d), at(x0 + 1, y0 + 1, d), tx);
  return lerp(top, bottom, ty);
}

void SceneConfig::validate() const {
  if (num_images < 1) {
    throw ValidationError("scene config: need at least one image");
  }
  if (width < 8 || height < 8) {
    throw ValidationError("scene config: image too small");
  }
  if (num_categories < 1 || num_categories > dpix) {
    throw ValidationError(
        "scene config: category count must be in [1, signature dim]");
  }
  if (objects_min < 1 || objects_max < objects_min) {
    throw ValidationError("scene config: bad objects-per-image range");
  }
  if (!(size_min > 0.0) || size_max < size_min) {
    throw ValidationError("scene config: bad size range");
  }
  if (size_max > std::min(width, height) - 2.0) {
    throw ValidationError("scene config: size_max does not fit in the image");
  }
  if (!(max_overlap >= 0.0) || max_overlap >= 1.0) {
    throw ValidationError("scene config: max_overlap must be in [0, 1)");
  }
  if (noise_std < 0.0) {
    throw ValidationError("scene config: negative noise std");
  }
  if (stride < 1 || dpix < 1 || pooled < 1) {
    throw ValidationError("scene config: stride, dpix, pooled must be >= 1");
  }
}

SceneGrid make_scene_grid(const ImageShape& shape, int stride, int dpix) {
  if (!shape.valid() || stride < 1 || dpix < 1) {
    throw ValidationError("scene grid: bad shape, stride, or channel count");
  }
  SceneGrid g;
  g.shape = shape;
  g.stride = stride;
  g.dpix = dpix;
  g.gw = (shape.width + stride - 1) / stride;
  g.gh = (shape.height + stride - 1) / stride;
  g.grid.assign(static_cast<std::size_t>(g.gw) * g.gh * dpix, 0.0f);
  return g;
}

void paint_object(SceneGrid& g, const Box& box, int category) {
  if (!box.valid()) {
    throw ValidationError("paint_object: degenerate box");
  }
  if (category < 0 || category >= g.dpix) {
    throw ValidationError("paint_object: category exceeds signature dim");
  }
  // Cells whose rectangle overlaps the box interior (boundary touch is not
  // overlap).
  const int x_lo = std::max(0, static_cast<int>(std::floor(box.x1() / g.stride)));
  const int x_hi = std::min(g.gw, static_cast<int>(std::ceil(box.x2() / g.stride)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(box.y1() / g.stride)));
  const int y_hi = std::min(g.gh, static_cast<int>(std::ceil(box.y2() / g.stride)));
  for (int gy = y_lo; gy < y_hi; ++gy) {
    for (int gx = x_lo; gx < x_hi; ++gx) {
      g.grid[(static_cast<std::size_t>(gy) * g.gw + gx) * g.dpix + category] +=
          1.0f;
    }
  }
}

void add_noise(SceneGrid& g, double noise_std, std::uint64_t seed) {
  if (noise_std < 0.0) {
    throw ValidationError("add_noise: negative std");
  }
  if (noise_std == 0.0) return;
  Rng rng(seed);
  for (float& v : g.grid) {
    v += static_cast<float>(noise_std * rng.normal());
  }
}

SyntheticData generate_dataset(const SceneConfig& cfg) {
  cfg.validate();
  SyntheticData out;
  const ImageShape shape{cfg.width, cfg.height};

  for (int k = 0; k < cfg.num_categories; ++k) {
    out.dataset.categories.push_back(
        CategoryRecord{k + 1, "class-" + std::to_string(k)});
  }

  int next_object_id = 1;
  for (int img = 0; img < cfg.num_images; ++img) {
    const int image_id = img + 1;
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d.png", image_id);
    out.dataset.images.push_back(ImageRecord{image_id, shape, name});

    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(img), 0));
    const int count =
        static_cast<int>(rng.uniform_int(cfg.objects_min, cfg.objects_max));

    SceneGrid g = make_scene_grid(shape, cfg.stride, cfg.dpix);
    g.image_id = image_id;

    std::vector<Box> placed;
    for (int obj = 0; obj < count; ++obj) {
      const int category = static_cast<int>(
          rng.uniform_int(0, cfg.num_categories - 1));
      bool ok = false;
      for (int attempt = 0; attempt < kPlacementRetries && !ok; ++attempt) {
        const double w = round2(rng.uniform(cfg.size_min, cfg.size_max));
        const double h = round2(rng.uniform(cfg.size_min, cfg.size_max));
        const Box candidate{
            round2(rng.uniform(w / 2 + 0.01, cfg.width - w / 2 - 0.01)),
            round2(rng.uniform(h / 2 + 0.01, cfg.height - h / 2 - 0.01)), w,
            h};
        bool clear = true;
        for (const Box& other : placed) {
          if (iou(candidate, other) > cfg.max_overlap) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        placed.push_back(candidate);
        ObjectRecord rec;
        rec.object_id = next_object_id++;
        rec.image_id = image_id;
        rec.category = category;
        rec.gt_box = candidate;
        out.dataset.objects.push_back(std::move(rec));
        paint_object(g, candidate, category);
        ok = true;
      }
      if (!ok) {
        throw SamplingError("scene generation: image " +
                            std::to_string(image_id) + " could not place " +
                            std::to_string(count) + " objects within " +
                            std::to_string(kPlacementRetries) + " retries");
      }
    }

    add_noise(g, cfg.noise_std,
              derive_seed(cfg.seed, static_cast<std::uint64_t>(img), 1));
    out.grids.push_back(std::move(g));
  }

  out.dataset.validate();
  return out;
}

int feature_dim(int pooled, int dpix) { return pooled * pooled * dpix + 4; }

std::vector<double> featurize(const SceneGrid& g, const Box& b, int pooled) {
  if (pooled < 1) {
    throw ValidationError("featurize: pooled lattice must be >= 1");
  }
  if (!b.valid()) {
    throw ValidationError("featurize: degenerate box (cx=" +
                          std::to_string(b.cx) + ", cy=" +
                          std::to_string(b.cy) + ", w=" + std::to_string(b.w) +
                          ", h=" + std::to_string(b.h) + ")");
  }
  if (!intersect_with_image(b, g.shape).valid()) {
    throw ValidationError(
        "featurize: box does not intersect the image (cx=" +
        std::to_string(b.cx) + ", cy=" + std::to_string(b.cy) +
        ", w=" + std::to_string(b.w) + ", h=" + std::to_string(b.h) +
        " vs " + std::to_string(g.shape.width) + "x" +
        std::to_string(g.shape.height) + ")");
  }
  std::vector<double> f(static_cast<std::size_t>(feature_dim(pooled, g.dpix)));
  std::size_t idx = 0;
  for (int sy = 0; sy < pooled; ++sy) {
    const double y = b.y1() + (sy + 0.5) * b.h / pooled;
    for (int sx = 0; sx < pooled; ++sx) {
      const double x = b.x1() + (sx + 0.5) * b.w / pooled;
      for (int d = 0; d < g.dpix; ++d) {
        f[idx++] = g.sample(x, y, d);
      }
    }
  }
  f[idx++] = b.w / g.shape.width;
  f[idx++] = b.h / g.shape.height;
  f[idx++] = b.cx / g.shape.width;
  f[idx++] = b.cy / g.shape.height;
  return f;
}

void save_scene_grids(const std::vector<SceneGrid>& grids,
                      const std::string& path) {
  if (grids.empty()) {
    throw ValidationError("scene sidecar: nothing to save");
  }
  for (const SceneGrid& g : grids) {
    if (g.shape.width != grids[0].shape.width ||
        g.shape.height != grids[0].shape.height ||
        g.stride != grids[0].stride || g.dpix != grids[0].dpix) {
      throw ValidationError("scene sidecar: grids must share one header");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open scene sidecar for writing: " + path);
  }
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(grids[0].shape.width));
  write_pod(out, static_cast<std::uint32_t>(grids[0].shape.height));
  write_pod(out, static_cast<std::uint32_t>(grids[0].stride));
  write_pod(out, static_cast<std::uint32_t>(grids[0].dpix));
  write_pod(out, static_cast<std::uint32_t>(grids.size()));
  for (const SceneGrid& g : grids) {
    out.write(reinterpret_cast<const char*>(g.grid.data()),
              static_cast<std::streamsize>(g.grid.size() * sizeof(float)));
  }
  if (!out) {
    throw IoError("failed writing scene sidecar: " + path);
  }
}

std::vector<SceneGrid> load_scene_grids(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open scene sidecar: " + path);
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("scene sidecar " + path + ": bad magic");
  }
  std::uint32_t version = 0, width = 0, height = 0, stride = 0, dpix = 0,
                count = 0;
  read_pod(in, version, path);
  if (version != kVersion) {
    throw ParseError("scene sidecar " + path + ": unsupported version " +
                     std::to_string(version));
  }
  read_pod(in, width, path);
  read_pod(in, height, path);
  read_pod(in, stride, path);
  read_pod(in, dpix, path);
  read_pod(in, count, path);
  if (width == 0 || height == 0 || stride == 0 || dpix == 0 || count == 0) {
    throw ParseError("scene sidecar " + path + ": empty dimensions");
  }

  std::vector<SceneGrid> grids;
  grids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SceneGrid g = make_scene_grid(
        ImageShape{static_cast<int>(width), static_cast<int>(height)},
        static_cast<int>(stride), static_cast<int>(dpix));
    in.read(reinterpret_cast<char*>(g.grid.data()),
            static_cast<std::streamsize>(g.grid.size() * sizeof(float)));
    if (!in) {
      throw ParseError("scene sidecar " + path + ": truncated grid data");
    }
    grids.push_back(std::move(g));
  }
  return grids;
}

}  // namespace p2b
