#include "p2b/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "p2b/error.hpp"

namespace p2b {

namespace {

std::unordered_map<int, const ObjectRecord*> objects_by_id(
    const Dataset& data) {
  std::unordered_map<int, const ObjectRecord*> out;
  out.reserve(data.objects.size());
  for (const ObjectRecord& obj : data.objects) {
    out.emplace(obj.object_id, &obj);
  }
  return out;
}

const Box& pseudo_for(const std::map<int, Box>& pseudo, int object_id) {
  const auto it = pseudo.find(object_id);
  if (it == pseudo.end()) {
    throw ValidationError("no pseudo box for object id " +
                          std::to_string(object_id));
  }
  return it->second;
}

}  // namespace

int iou_bin(double v) {
  const int bin = static_cast<int>(std::floor(v * kIouBins));
  return std::clamp(bin, 0, kIouBins - 1);
}

double miou_pred(const std::map<int, Box>& pseudo, const Dataset& data) {
  if (data.objects.empty()) {
    throw ValidationError("miou_pred: dataset has no objects");
  }
  double sum = 0.0;
  for (const ObjectRecord& obj : data.objects) {
    sum += iou(pseudo_for(pseudo, obj.object_id), obj.gt_box);
  }
  return sum / static_cast<double>(data.objects.size());
}

ProposalQuality miou_prop(const std::vector<ProposalBag>& bags,
                          const Dataset& data) {
  if (bags.empty()) {
    throw ValidationError("miou_prop: no bags given");
  }
  const auto by_id = objects_by_id(data);
  ProposalQuality out;
  out.per_object.reserve(bags.size());
  for (const ProposalBag& bag : bags) {
    if (bag.proposals.empty()) {
      throw ValidationError("miou_prop: bag for object " +
                            std::to_string(bag.object_id) + " is empty");
    }
    const auto it = by_id.find(bag.object_id);
    if (it == by_id.end()) {
      throw ValidationError("miou_prop: unknown object id " +
                            std::to_string(bag.object_id));
    }
    double sum = 0.0;
    for (const Box& b : bag.proposals) {
      sum += iou(b, it->second->gt_box);
    }
    const double mean = sum / static_cast<double>(bag.proposals.size());
    out.per_object.push_back(mean);
    ++out.histogram[static_cast<std::size_t>(iou_bin(mean))];
  }
  double total = 0.0;
  for (double v : out.per_object) total += v;
  out.mean = total / static_cast<double>(out.per_object.size());
  return out;
}

std::map<std::size_t, std::size_t> balance_histogram(
    const std::vector<ProposalBag>& bags) {
  std::map<std::size_t, std::size_t> out;
  for (const ProposalBag& bag : bags) {
    ++out[bag.proposals.size()];
  }
  return out;
}

std::vector<std::pair<double, double>> recall_at(
    const std::map<int, Box>& pseudo, const Dataset& data,
    const std::vector<double>& thresholds) {
  if (data.objects.empty()) {
    throw ValidationError("recall_at: dataset has no objects");
  }
  std::vector<double> ious;
  ious.reserve(data.objects.size());
  for (const ObjectRecord& obj : data.objects) {
    ious.push_back(iou(pseudo_for(pseudo, obj.object_id), obj.gt_box));
  }
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  for (double tau : thresholds) {
    const auto hit = std::count_if(ious.begin(), ious.end(),
                                   [tau](double v) { return v >= tau; });
    out.emplace_back(tau, static_cast<double>(hit) /
                              static_cast<double>(ious.size()));
  }
  return out;
}

}  // namespace p2b
