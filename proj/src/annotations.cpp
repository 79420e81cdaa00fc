#include "p2b/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "p2b/error.hpp"
#include "p2b/rng.hpp"

namespace p2b {
namespace {

using nlohmann::json;

constexpr int kRejectionBudget = 10000;

// Fixed-precision value for serialization; adding 0.0 folds -0.0 into +0.0.
double round2(double v) { return std::round(v * 100.0) / 100.0 + 0.0; }

double gauss_pdf(const RgSupport& s, double px, double py) {
  const double zx = (px - s.mean_x) / s.std_x;
  const double zy = (py - s.mean_y) / s.std_y;
  const double two_pi = 6.283185307179586;
  return std::exp(-0.5 * (zx * zx + zy * zy)) / (two_pi * s.std_x * s.std_y);
}

bool in_ellipse(const RgSupport& s, double px, double py) {
  const double ex = (px - s.ell_cx) / s.ell_ax;
  const double ey = (py - s.ell_cy) / s.ell_ay;
  return ex * ex + ey * ey <= 1.0;
}

bool ellipse_meets_mask(const RgSupport& s) {
  if (s.mask == nullptr) {
    // The ellipse center is the box center, always inside the box.
    return true;
  }
  const int x_lo = std::max(
      s.mask->x, static_cast<int>(std::floor(s.ell_cx - s.ell_ax)) - 1);
  const int x_hi = std::min(
      s.mask->x + s.mask->width,
      static_cast<int>(std::ceil(s.ell_cx + s.ell_ax)) + 1);
  const int y_lo = std::max(
      s.mask->y, static_cast<int>(std::floor(s.ell_cy - s.ell_ay)) - 1);
  const int y_hi = std::min(
      s.mask->y + s.mask->height,
      static_cast<int>(std::ceil(s.ell_cy + s.ell_ay)) + 1);
  for (int ay = y_lo; ay < y_hi; ++ay) {
    for (int ax = x_lo; ax < x_hi; ++ax) {
      if (s.mask->at_pixel(ax, ay) && in_ellipse(s, ax + 0.5, ay + 0.5)) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace

bool MaskRaster::any() const {
  return std::any_of(bits.begin(), bits.end(),
                     [](std::uint8_t b) { return b != 0; });
}

Box MaskRaster::tight_bounds() const {
  int min_x = std::numeric_limits<int>::max();
  int min_y = std::numeric_limits<int>::max();
  int max_x = std::numeric_limits<int>::min();
  int max_y = std::numeric_limits<int>::min();
  for (int ly = 0; ly < height; ++ly) {
    for (int lx = 0; lx < width; ++lx) {
      if (bits[static_cast<std::size_t>(ly) * width + lx] != 0) {
        min_x = std::min(min_x, lx);
        min_y = std::min(min_y, ly);
        max_x = std::max(max_x, lx);
        max_y = std::max(max_y, ly);
      }
    }
  }
  if (max_x < min_x) {
    throw ValidationError("mask raster has no set pixels");
  }
  return corner_to_center({static_cast<double>(x + min_x),
                           static_cast<double>(y + min_y),
                           static_cast<double>(x + max_x + 1),
                           static_cast<double>(y + max_y + 1)});
}

std::array<double, 2> MaskRaster::centroid() const {
  double sx = 0.0, sy = 0.0;
  long count = 0;
  for (int ly = 0; ly < height; ++ly) {
    for (int lx = 0; lx < width; ++lx) {
      if (bits[static_cast<std::size_t>(ly) * width + lx] != 0) {
        sx += x + lx + 0.5;
        sy += y + ly + 0.5;
        ++count;
      }
    }
  }
  if (count == 0) {
    throw ValidationError("mask raster has no set pixels");
  }
  return {sx / count, sy / count};
}

const ImageRecord& Dataset::image_by_id(int image_id) const {
  for (const auto& img : images) {
    if (img.id == image_id) return img;
  }
  throw ValidationError("unknown image_id " + std::to_string(image_id));
}

std::vector<int> Dataset::object_indices_of_image(int image_id) const {
  std::vector<int> out;
  for (int i = 0; i < num_objects(); ++i) {
    if (objects[i].image_id == image_id) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  std::set<int> image_ids;
  for (const auto& img : images) {
    if (!img.shape.valid()) {
      throw ValidationError("image id " + std::to_string(img.id) +
                            ": non-positive dimensions");
    }
    if (!image_ids.insert(img.id).second) {
      throw ValidationError("duplicate image id " + std::to_string(img.id));
    }
  }
  std::set<int> category_ids;
  for (const auto& cat : categories) {
    if (!category_ids.insert(cat.id).second) {
      throw ValidationError("duplicate category id " +
                            std::to_string(cat.id));
    }
  }
  std::set<int> object_ids;
  for (const auto& obj : objects) {
    const std::string where = "annotation id " + std::to_string(obj.object_id);
    if (!object_ids.insert(obj.object_id).second) {
      throw ValidationError("duplicate " + where);
    }
    if (image_ids.find(obj.image_id) == image_ids.end()) {
      throw ValidationError(where + " references unknown image_id " +
                            std::to_string(obj.image_id));
    }
    if (obj.category < 0 || obj.category >= num_categories()) {
      throw ValidationError(where + ": category index out of range");
    }
    if (!obj.gt_box.valid()) {
      throw ValidationError(where + ": degenerate box");
    }
    const ImageShape shape = image_by_id(obj.image_id).shape;
    // Tolerance absorbs the 2-decimal serialization of box values.
    if (!box_inside_image(obj.gt_box, shape, 0.011)) {
      throw ValidationError(where + ": box extends outside its image");
    }
    if (obj.mask.has_value()) {
      if (!obj.mask->any()) {
        throw ValidationError(where + ": empty mask raster");
      }
      if (static_cast<std::size_t>(obj.mask->width) * obj.mask->height !=
          obj.mask->bits.size()) {
        throw ValidationError(where + ": mask bits size mismatch");
      }
      const Box mb = obj.mask->tight_bounds();
      const double tol = 1.0 + 1e-9;
      if (std::fabs(mb.x1() - obj.gt_box.x1()) > tol ||
          std::fabs(mb.y1() - obj.gt_box.y1()) > tol ||
          std::fabs(mb.x2() - obj.gt_box.x2()) > tol ||
          std::fabs(mb.y2() - obj.gt_box.y2()) > tol) {
        throw ValidationError(where +
                              ": mask bounds disagree with box by > 1 px");
      }
    }
    if (obj.point.has_value()) {
      if (obj.point->category != obj.category) {
        throw ValidationError(where + ": point category mismatch");
      }
    }
  }
}

void RGParams::validate() const {
  if (!(sigma > 0.0)) {
    throw ValidationError("rectified Gaussian: sigma must be positive");
  }
  if (!(kappa > 0.0) || kappa > 0.5) {
    throw ValidationError("rectified Gaussian: kappa must be in (0, 1/2]");
  }
  if (!(axis_cap > 0.0)) {
    throw ValidationError("rectified Gaussian: axis_cap must be positive");
  }
}

bool RgSupport::contains(double px, double py) const {
  bool in_mask;
  if (mask != nullptr) {
    in_mask = mask->contains(px, py);
  } else {
    in_mask = px >= box.x1() && px <= box.x2() && py >= box.y1() &&
              py <= box.y2();
  }
  if (!in_mask) return false;
  return !use_ellipse || in_ellipse(*this, px, py);
}

std::array<double, 4> RgSupport::bounds() const {
  double x1, y1, x2, y2;
  if (mask != nullptr) {
    x1 = mask->x;
    y1 = mask->y;
    x2 = mask->x + mask->width;
    y2 = mask->y + mask->height;
  } else {
    x1 = box.x1();
    y1 = box.y1();
    x2 = box.x2();
    y2 = box.y2();
  }
  if (use_ellipse) {
    x1 = std::max(x1, ell_cx - ell_ax);
    y1 = std::max(y1, ell_cy - ell_ay);
    x2 = std::min(x2, ell_cx + ell_ax);
    y2 = std::min(y2, ell_cy + ell_ay);
  }
  return {x1, y1, x2, y2};
}

std::array<double, 2> RgSupport::fallback_center() const {
  if (mask != nullptr) return mask->centroid();
  return {box.cx, box.cy};
}

RgSupport rg_support(const ObjectRecord& obj, const RGParams& params) {
  params.validate();
  if (!obj.gt_box.valid()) {
    throw ValidationError("rg_support: degenerate box");
  }
  RgSupport s;
  s.mask = obj.mask.has_value() ? &*obj.mask : nullptr;
  s.box = obj.gt_box;
  s.mean_x = obj.gt_box.cx + params.mu * obj.gt_box.w;
  s.mean_y = obj.gt_box.cy + params.mu * obj.gt_box.h;
  s.std_x = params.sigma * obj.gt_box.w;
  s.std_y = params.sigma * obj.gt_box.h;
  s.ell_cx = obj.gt_box.cx;
  s.ell_cy = obj.gt_box.cy;
  s.ell_ax = std::min(params.kappa * obj.gt_box.w, params.axis_cap);
  s.ell_ay = std::min(params.kappa * obj.gt_box.h, params.axis_cap);
  s.use_ellipse = ellipse_meets_mask(s);
  return s;
}

PointAnno sample_qc_point(const ObjectRecord& obj, const RGParams& params,
                          std::uint64_t seed) {
  const RgSupport sup = rg_support(obj, params);
  Rng rng(seed);
  for (int attempt = 0; attempt < kRejectionBudget; ++attempt) {
    const double px = rng.normal(sup.mean_x, sup.std_x);
    const double py = rng.normal(sup.mean_y, sup.std_y);
    if (sup.contains(px, py)) {
      return PointAnno{px, py, obj.category};
    }
  }
  const auto c = sup.fallback_center();
  return PointAnno{c[0], c[1], obj.category};
}

RgDensity::RgDensity(const ObjectRecord& obj, const RGParams& params,
                     int grid_resolution)
    : obj_(obj), params_(params) {
  if (grid_resolution < 2) {
    throw ValidationError("rg density: grid resolution too small");
  }
  support_ = rg_support(obj_, params_);
  const auto b = support_.bounds();
  const double dx = (b[2] - b[0]) / grid_resolution;
  const double dy = (b[3] - b[1]) / grid_resolution;
  if (dx <= 0.0 || dy <= 0.0) {
    throw ValidationError("rg density: empty support bounds");
  }
  double total = 0.0;
  for (int iy = 0; iy < grid_resolution; ++iy) {
    const double py = b[1] + (iy + 0.5) * dy;
    for (int ix = 0; ix < grid_resolution; ++ix) {
      const double px = b[0] + (ix + 0.5) * dx;
      if (support_.contains(px, py)) {
        total += gauss_pdf(support_, px, py);
      }
    }
  }
  normalizer_ = total * dx * dy;
  if (!(normalizer_ > 0.0)) {
    throw ValidationError("rg density: support carries no mass");
  }
}

double RgDensity::operator()(double px, double py) const {
  if (!support_.contains(px, py)) return 0.0;
  return gauss_pdf(support_, px, py) / normalizer_;
}

namespace {

const json& require_key(const json& j, const char* key,
                        const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  return *it;
}

int require_int(const json& j, const char* key, const std::string& where) {
  const json& v = require_key(j, key, where);
  if (!v.is_number_integer()) {
    throw ParseError(where + ": field '" + key + "' must be an integer");
  }
  return v.get<int>();
}

double require_num(const json& v, const std::string& where) {
  if (!v.is_number()) {
    throw ParseError(where + ": expected a number");
  }
  return v.get<double>();
}

std::string require_str(const json& j, const char* key,
                        const std::string& where) {
  const json& v = require_key(j, key, where);
  if (!v.is_string()) {
    throw ParseError(where + ": field '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

MaskRaster parse_mask(const json& j, const std::string& where) {
  MaskRaster m;
  m.x = require_int(j, "x", where);
  m.y = require_int(j, "y", where);
  m.width = require_int(j, "width", where);
  m.height = require_int(j, "height", where);
  if (m.width <= 0 || m.height <= 0) {
    throw ParseError(where + ": mask dimensions must be positive");
  }
  const std::string bits = require_str(j, "bits", where);
  if (bits.size() != static_cast<std::size_t>(m.width) * m.height) {
    throw ParseError(where + ": mask bits length " +
                     std::to_string(bits.size()) + " != width*height");
  }
  m.bits.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') {
      throw ParseError(where + ": mask bits must be '0'/'1'");
    }
    m.bits.push_back(c == '1' ? 1 : 0);
  }
  return m;
}

json mask_to_json(const MaskRaster& m) {
  std::string bits;
  bits.reserve(m.bits.size());
  for (std::uint8_t b : m.bits) bits.push_back(b ? '1' : '0');
  return json{{"x", m.x},
              {"y", m.y},
              {"width", m.width},
              {"height", m.height},
              {"bits", bits}};
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open annotation file: " + path);
  }
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("annotation file " + path + ": " + e.what());
  }
  if (!root.is_object()) {
    throw ParseError("annotation file " + path + ": top level is not an object");
  }

  Dataset ds;

  const json& images = require_key(root, "images", "annotation file");
  if (!images.is_array()) {
    throw ParseError("'images' must be an array");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "image record #" + std::to_string(i);
    const json& j = images[i];
    if (!j.is_object()) throw ParseError(where + ": not an object");
    ImageRecord img;
    img.id = require_int(j, "id", where);
    img.shape.width = require_int(j, "width", where);
    img.shape.height = require_int(j, "height", where);
    img.file_name = require_str(j, "file_name", where);
    ds.images.push_back(std::move(img));
  }

  const json& categories = require_key(root, "categories", "annotation file");
  if (!categories.is_array()) {
    throw ParseError("'categories' must be an array");
  }
  std::map<int, int> category_index;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const std::string where = "category record #" + std::to_string(i);
    const json& j = categories[i];
    if (!j.is_object()) throw ParseError(where + ": not an object");
    CategoryRecord cat;
    cat.id = require_int(j, "id", where);
    cat.name = require_str(j, "name", where);
    if (!category_index.emplace(cat.id, static_cast<int>(i)).second) {
      throw ParseError(where + ": duplicate category id " +
                       std::to_string(cat.id));
    }
    ds.categories.push_back(std::move(cat));
  }

  const json& annotations = require_key(root, "annotations", "annotation file");
  if (!annotations.is_array()) {
    throw ParseError("'annotations' must be an array");
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const json& j = annotations[i];
    std::string where = "annotation record #" + std::to_string(i);
    if (!j.is_object()) throw ParseError(where + ": not an object");
    ObjectRecord obj;
    obj.object_id = require_int(j, "id", where);
    where = "annotation id " + std::to_string(obj.object_id);
    obj.image_id = require_int(j, "image_id", where);
    const int category_id = require_int(j, "category_id", where);
    const auto cit = category_index.find(category_id);
    if (cit == category_index.end()) {
      throw ParseError(where + ": unknown category_id " +
                       std::to_string(category_id));
    }
    obj.category = cit->second;

    const json& bbox = require_key(j, "bbox", where);
    if (!bbox.is_array() || bbox.size() != 4) {
      throw ParseError(where + ": bbox must be [x, y, w, h]");
    }
    const double bx = require_num(bbox[0], where + " bbox[0]");
    const double by = require_num(bbox[1], where + " bbox[1]");
    const double bw = require_num(bbox[2], where + " bbox[2]");
    const double bh = require_num(bbox[3], where + " bbox[3]");
    if (!(bw > 0.0) || !(bh > 0.0)) {
      throw ParseError(where + ": bbox width/height must be positive");
    }
    obj.gt_box = Box{bx + bw / 2.0, by + bh / 2.0, bw, bh};

    if (j.contains("point")) {
      const json& pt = j["point"];
      if (!pt.is_array() || pt.size() != 2) {
        throw ParseError(where + ": point must be [x, y]");
      }
      obj.point = PointAnno{require_num(pt[0], where + " point[0]"),
                            require_num(pt[1], where + " point[1]"),
                            obj.category};
    }
    if (j.contains("mask")) {
      if (!j["mask"].is_object()) {
        throw ParseError(where + ": mask must be an object");
      }
      obj.mask = parse_mask(j["mask"], where);
    }
    ds.objects.push_back(std::move(obj));
  }

  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  json root;
  root["images"] = json::array();
  for (const auto& img : dataset.images) {
    root["images"].push_back(json{{"id", img.id},
                                  {"width", img.shape.width},
                                  {"height", img.shape.height},
                                  {"file_name", img.file_name}});
  }
  root["categories"] = json::array();
  for (const auto& cat : dataset.categories) {
    root["categories"].push_back(json{{"id", cat.id}, {"name", cat.name}});
  }
  root["annotations"] = json::array();
  for (const auto& obj : dataset.objects) {
    json j{{"id", obj.object_id},
           {"image_id", obj.image_id},
           {"category_id", dataset.categories[obj.category].id},
           {"bbox",
            {round2(obj.gt_box.x1()), round2(obj.gt_box.y1()),
             round2(obj.gt_box.w), round2(obj.gt_box.h)}}};
    if (obj.point.has_value()) {
      j["point"] = {round2(obj.point->px), round2(obj.point->py)};
    }
    if (obj.mask.has_value()) {
      j["mask"] = mask_to_json(*obj.mask);
    }
    root["annotations"].push_back(std::move(j));
  }

  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open output file: " + path);
  }
  out << root.dump(2) << '\n';
  if (!out) {
    throw IoError("failed writing output file: " + path);
  }
}

void save_pseudo_boxes(const Dataset& dataset,
                       const std::map<int, Box>& pseudo,
                       const std::string& path) {
  std::vector<int> missing;
  for (const auto& obj : dataset.objects) {
    if (pseudo.find(obj.object_id) == pseudo.end()) {
      missing.push_back(obj.object_id);
    }
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "pseudo boxes missing for object ids:";
    for (int id : missing) msg << ' ' << id;
    throw ValidationError(msg.str());
  }

  Dataset out = dataset;
  for (auto& obj : out.objects) {
    const Box& b = pseudo.at(obj.object_id);
    if (!b.valid()) {
      throw ValidationError("pseudo box for object id " +
                            std::to_string(obj.object_id) +
                            " is degenerate");
    }
    obj.gt_box = b;
    // The raster describes the original annotation, not the replacement box.
    obj.mask.reset();
  }
  save_dataset(out, path);
}

}  // namespace p2b
