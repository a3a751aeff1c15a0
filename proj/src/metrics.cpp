#include "samic/metrics.hpp"

#include "samic/errors.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace samic {
namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("masks differ in shape");
}

// Boundary pixels of `a` that lie within `tol` of some boundary pixel of `b`.
std::size_t matched(const BinaryMask& a, const BinaryMask& b, int tol) {
  std::vector<std::pair<int, int>> disk;
  for (int dy = -tol; dy <= tol; ++dy) {
    for (int dx = -tol; dx <= tol; ++dx) {
      if (dx * dx + dy * dy <= tol * tol) disk.emplace_back(dx, dy);
    }
  }
  const int h = static_cast<int>(a.rows());
  const int w = static_cast<int>(a.cols());
  std::size_t hits = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!a(y, x)) continue;
      for (const auto& [dx, dy] : disk) {
        const int nx = x + dx;
        const int ny = y + dy;
        if (nx >= 0 && ny >= 0 && nx < w && ny < h && b(ny, nx)) {
          ++hits;
          break;
        }
      }
    }
  }
  return hits;
}

}  // namespace

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt);
  const auto p = pred != 0;
  const auto g = gt != 0;
  const double inter = (p && g).count();
  const double uni = (p || g).count();
  return uni == 0.0 ? 1.0 : inter / uni;
}

BinaryMask mask_boundary(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  BinaryMask out = BinaryMask::Zero(h, w);
  auto off = [&](int x, int y) { return x < 0 || y < 0 || x >= w || y >= h || mask(y, x) == 0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x) && (off(x - 1, y) || off(x + 1, y) || off(x, y - 1) || off(x, y + 1))) out(y, x) = 1;
    }
  }
  return out;
}

int boundary_tolerance(int height, int width) {
  return std::max(1, static_cast<int>(std::ceil(0.008 * std::hypot(height, width))));
}

double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance) {
  require_same_shape(pred, gt);
  if (tolerance < 0) throw ArgumentError("boundary tolerance must be non-negative");
  const BinaryMask bp = mask_boundary(pred);
  const BinaryMask bg = mask_boundary(gt);
  const double np = bp.cast<int>().sum();
  const double ng = bg.cast<int>().sum();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = static_cast<double>(matched(bp, bg, tolerance)) / np;
  const double recall = static_cast<double>(matched(bg, bp, tolerance)) / ng;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport aggregate(const std::vector<ScoredItem>& items) {
  MetricReport report;
  std::map<std::string, double> sums;
  for (const auto& item : items) {
    sums[item.class_name] += item.iou;
    ++report.per_class_count[item.class_name];
  }
  for (const auto& [name, total] : sums) {
    report.per_class[name] = total / report.per_class_count[name];
    report.mean += report.per_class[name];
  }
  if (!report.per_class.empty()) report.mean /= static_cast<double>(report.per_class.size());
  return report;
}

void assign_folds(MetricReport& report, const std::map<std::string, int>& fold_of_class) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& [name, value] : report.per_class) {
    const auto it = fold_of_class.find(name);
    if (it == fold_of_class.end()) throw ArgumentError("class without a fold: " + name);
    acc[it->second].first += value;
    ++acc[it->second].second;
  }
  report.per_fold.clear();
  for (const auto& [fold, sum] : acc) report.per_fold[fold] = sum.first / sum.second;
}

MetricReport j_and_f(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt) {
  if (pred.size() != gt.size()) throw DimensionError("prediction and ground-truth sequences differ in length");
  if (pred.empty()) throw ArgumentError("j_and_f: empty sequence");
  MetricReport report;
  report.has_video = true;
  const int tol = boundary_tolerance(static_cast<int>(gt.front().rows()), static_cast<int>(gt.front().cols()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    report.j_per_frame.push_back(iou(pred[i], gt[i]));
    report.f_per_frame.push_back(boundary_f(pred[i], gt[i], tol));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    report.j_mean += report.j_per_frame[i];
    report.f_mean += report.f_per_frame[i];
  }
  report.j_mean /= static_cast<double>(pred.size());
  report.f_mean /= static_cast<double>(pred.size());
  report.jf = 0.5 * (report.j_mean + report.f_mean);
  report.metadata["boundary_tolerance_px"] = tol;
  return report;
}

std::vector<FoldSpec> make_folds(const std::vector<std::string>& classes, int k) {
  if (k < 1) throw ArgumentError("fold count must be positive");
  if (static_cast<std::size_t>(k) > classes.size()) throw ArgumentError("more folds than classes");
  std::vector<FoldSpec> folds(static_cast<std::size_t>(k));
  const std::size_t base = classes.size() / static_cast<std::size_t>(k);
  const std::size_t extra = classes.size() % static_cast<std::size_t>(k);
  std::size_t next = 0;
  for (int f = 0; f < k; ++f) {
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.fold_count = k;
    fold.fold_index = f;
    const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    fold.classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(next),
                        classes.begin() + static_cast<std::ptrdiff_t>(next + size));
    next += size;
  }
  return folds;
}

nlohmann::ordered_json to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["per_class"] = nlohmann::ordered_json::object();
  for (const auto& [name, value] : report.per_class) {
    j["per_class"][name] = {{"iou", value}, {"items", report.per_class_count.at(name)}};
  }
  j["per_fold"] = nlohmann::ordered_json::object();
  for (const auto& [fold, value] : report.per_fold) j["per_fold"][std::to_string(fold)] = value;
  j["miou"] = report.mean;
  if (report.has_video) {
    j["j_mean"] = report.j_mean;
    j["f_mean"] = report.f_mean;
    j["jf"] = report.jf;
    j["j_per_frame"] = report.j_per_frame;
    j["f_per_frame"] = report.f_per_frame;
  }
  j["metadata"] = report.metadata;
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    for (const auto& [name, entry] : j.at("per_class").items()) {
      r.per_class[name] = entry.at("iou").get<double>();
      r.per_class_count[name] = entry.at("items").get<int>();
    }
    for (const auto& [fold, value] : j.at("per_fold").items()) r.per_fold[std::stoi(fold)] = value.get<double>();
    r.mean = j.at("miou").get<double>();
    if (j.contains("jf")) {
      r.has_video = true;
      r.j_mean = j.at("j_mean").get<double>();
      r.f_mean = j.at("f_mean").get<double>();
      r.jf = j.at("jf").get<double>();
      r.j_per_frame = j.at("j_per_frame").get<std::vector<double>>();
      r.f_per_frame = j.at("f_per_frame").get<std::vector<double>>();
    }
    if (j.contains("metadata")) r.metadata = j["metadata"];
  } catch (const nlohmann::json::exception& e) {
    throw StorageError(std::string("malformed metric report: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw StorageError("malformed metric report: bad fold key");
  }
  return r;
}

std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::set<int> folds;
  bool video = false;
  for (const auto& [name, r] : rows) {
    for (const auto& [f, v] : r.per_fold) folds.insert(f);
    video = video || r.has_video;
  }
  std::size_t name_width = 6;
  for (const auto& [name, r] : rows) name_width = std::max(name_width, name.size());

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_width)) << "Method" << std::right;
  for (int f : folds) out << "  " << std::setw(7) << ("fold" + std::to_string(f));
  out << "  " << std::setw(7) << "mIoU";
  if (video) out << "  " << std::setw(7) << "J&F";
  out << "\n";
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(name_width)) << name << std::right << std::fixed
        << std::setprecision(1);
    for (int f : folds) {
      const auto it = r.per_fold.find(f);
      if (it == r.per_fold.end()) {
        out << "  " << std::setw(7) << "-";
      } else {
        out << "  " << std::setw(7) << 100.0 * it->second;
      }
    }
    out << "  " << std::setw(7) << 100.0 * r.mean;
    if (video) {
      if (r.has_video) {
        out << "  " << std::setw(7) << 100.0 * r.jf;
      } else {
        out << "  " << std::setw(7) << "-";
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace samic
