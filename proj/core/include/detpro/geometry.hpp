#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace detpro::geometry {

// Axis-aligned box, corner form, image units.
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const;
};

enum class RecordKind { ground_truth, region_proposal };
enum class ClassSplit { base, novel };

struct ProposalRecord {
    std::string id;
    std::string image_id;
    Box box;
    RecordKind kind = RecordKind::region_proposal;
    std::optional<int> label;              // class id; required for ground truth
    ClassSplit split = ClassSplit::base;
    double max_iou = 0.0;                  // derived by partition(); 1.0 for ground truth
    std::optional<std::vector<double>> embedding;
};

// Positives = foreground proposals (max IoU >= threshold, label inherited from
// the argmax ground truth) plus all ground truths. Negatives = everything else.
struct ProposalPartition {
    std::vector<ProposalRecord> positives;
    std::vector<ProposalRecord> negatives;
    double threshold = 0.5;
};

// One IoU band of positives: [lo, hi), closed at the top band.
struct ContextGroup {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<ProposalRecord> members;
};

// Intersection area / union area. Degenerate zero-area pairs fall back to the
// zero-union rule (IoU 0), identical non-degenerate boxes give exactly 1.
double iou(const Box& a, const Box& b);

// Splits proposals against same-image ground truths at threshold theta.
// Argmax-IoU ties break toward the lowest ground-truth id. A proposal in an
// image without ground truths is negative with max_iou 0.
ProposalPartition partition(const std::vector<ProposalRecord>& proposals,
                            const std::vector<ProposalRecord>& ground_truths,
                            double theta);

// Grades partition positives into K = (hi - lo)/step disjoint IoU bands.
// Intervals are half-open with the final one closed, so max_iou == hi lands in
// the top band. Positives below lo are dropped. With gt_in_all_groups set,
// ground truths are added to every band rather than only their own.
std::vector<ContextGroup> grade(const ProposalPartition& part, double lo, double hi,
                                double step, bool gt_in_all_groups = false);

// floor(fraction * |negatives|) records drawn uniformly without replacement,
// emitted in input order. fraction == 1 returns the input unchanged.
std::vector<ProposalRecord> subsample_negatives(const std::vector<ProposalRecord>& negatives,
                                                double fraction, std::uint64_t seed);

} // namespace detpro::geometry
