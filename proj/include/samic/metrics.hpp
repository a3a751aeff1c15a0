#pragma once

// Segmentation metrics (IoU, boundary F, J&F), class folds and report emission.

#include "samic/image.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace samic {

// |pred & gt| / |pred | gt|; 1 when both masks are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

// Foreground pixels with a 4-neighbour outside the mask (the image border counts as outside).
BinaryMask mask_boundary(const BinaryMask& mask);

// Boundary tolerance in pixels: ceil(0.008 * image diagonal), at least 1.
int boundary_tolerance(int height, int width);

// Boundary F-measure: a boundary pixel matches when the other boundary has a pixel
// within Euclidean distance `tolerance`. Both boundaries empty gives 1; one empty gives 0.
double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance);

struct ScoredItem {
  std::string class_name;
  double iou = 0.0;
};

struct MetricReport {
  std::map<std::string, double> per_class;  // mean IoU per class
  std::map<std::string, int> per_class_count;
  std::map<int, double> per_fold;           // mean over the fold's classes
  double mean = 0.0;                        // mean over classes
  // Video only.
  bool has_video = false;
  std::vector<double> j_per_frame;
  std::vector<double> f_per_frame;
  double j_mean = 0.0;
  double f_mean = 0.0;
  double jf = 0.0;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// Per-class mean of item IoUs, then the mean over classes.
MetricReport aggregate(const std::vector<ScoredItem>& items);

// Fills per_fold using the given class-to-fold assignment.
void assign_folds(MetricReport& report, const std::map<std::string, int>& fold_of_class);

// Per-frame J (IoU) and F (boundary F at the default tolerance); J&F = (mean J + mean F) / 2.
MetricReport j_and_f(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt);

struct FoldSpec {
  std::vector<std::string> classes;  // classes held out in this fold
  int fold_count = 0;
  int fold_index = 0;
};

// Contiguous, order-stable partition; when k does not divide the class count the
// first (n mod k) folds get one extra class.
std::vector<FoldSpec> make_folds(const std::vector<std::string>& classes, int k);

nlohmann::ordered_json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

// Rows: one per method; columns: per-fold means, mean mIoU and J&F when present.
std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace samic
