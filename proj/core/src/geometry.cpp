#include "detpro/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "detpro/errors.hpp"
#include "detpro/rng.hpp"

namespace detpro::geometry {

bool Box::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 <= x2 && y1 <= y2;
}

double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid())
        throw data_error("iou: invalid box");
    double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    double inter = iw * ih;
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0; // two degenerate boxes
    return inter / uni;
}

ProposalPartition partition(const std::vector<ProposalRecord>& proposals,
                            const std::vector<ProposalRecord>& ground_truths,
                            double theta) {
    if (!(theta > 0.0 && theta < 1.0))
        throw config_error("partition: threshold must lie in (0,1)");

    std::unordered_map<std::string, std::vector<const ProposalRecord*>> gts_by_image;
    for (const ProposalRecord& gt : ground_truths) {
        if (gt.kind != RecordKind::ground_truth)
            throw data_error("partition: non-ground-truth record in ground truth list: " + gt.id);
        if (!gt.label)
            throw data_error("partition: ground truth without label: " + gt.id);
        gts_by_image[gt.image_id].push_back(&gt);
    }

    ProposalPartition out;
    out.threshold = theta;
    out.positives.reserve(ground_truths.size());
    for (const ProposalRecord& gt : ground_truths) {
        ProposalRecord rec = gt;
        rec.max_iou = 1.0;
        out.positives.push_back(std::move(rec));
    }

    for (const ProposalRecord& p : proposals) {
        ProposalRecord rec = p;
        rec.max_iou = 0.0;
        const ProposalRecord* best = nullptr;
        auto it = gts_by_image.find(p.image_id);
        if (it != gts_by_image.end()) {
            for (const ProposalRecord* gt : it->second) {
                double v = iou(p.box, gt->box);
                // ties go to the lowest ground-truth id
                bool better = v > rec.max_iou ||
                              (v == rec.max_iou && v > 0.0 && best && gt->id < best->id);
                if (better) {
                    rec.max_iou = v;
                    best = gt;
                }
            }
        }
        if (rec.max_iou >= theta && best) {
            rec.label = best->label;
            out.positives.push_back(std::move(rec));
        } else {
            out.negatives.push_back(std::move(rec));
        }
    }
    return out;
}

std::vector<ContextGroup> grade(const ProposalPartition& part, double lo, double hi,
                                double step, bool gt_in_all_groups) {
    if (!(lo < hi))
        throw config_error("grade: interval start must be below its end");
    if (!(step > 0.0))
        throw config_error("grade: step must be positive");
    double ratio = (hi - lo) / step;
    long k_count = std::lround(ratio);
    if (k_count < 1 || std::fabs(ratio - static_cast<double>(k_count)) > 1e-9)
        throw config_error("grade: step does not divide the IoU range");

    std::vector<ContextGroup> groups(static_cast<std::size_t>(k_count));
    for (long k = 0; k < k_count; ++k) {
        groups[k].lo = lo + static_cast<double>(k) * step;
        groups[k].hi = (k + 1 == k_count) ? hi : lo + static_cast<double>(k + 1) * step;
    }

    for (const ProposalRecord& p : part.positives) {
        if (gt_in_all_groups && p.kind == RecordKind::ground_truth) {
            for (ContextGroup& g : groups) g.members.push_back(p);
            continue;
        }
        double v = p.max_iou;
        if (v < lo || v > hi) continue;
        // 1e-9 boundary snap keeps exact interval edges in their upper band
        // despite the floating quotient.
        long idx = static_cast<long>(std::floor((v - lo) / step + 1e-9));
        if (idx >= k_count) idx = k_count - 1;
        if (idx < 0) continue;
        groups[static_cast<std::size_t>(idx)].members.push_back(p);
    }
    return groups;
}

std::vector<ProposalRecord> subsample_negatives(const std::vector<ProposalRecord>& negatives,
                                                double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw config_error("subsample_negatives: fraction must lie in (0,1]");
    if (fraction == 1.0 || negatives.empty()) return negatives;

    std::size_t want = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(negatives.size()) + 1e-9));
    if (want >= negatives.size()) return negatives;

    // Partial Fisher-Yates over indices, then emit in input order.
    std::vector<std::size_t> idx(negatives.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    SeededRng rng(seed);
    for (std::size_t i = 0; i < want; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(want);
    std::sort(idx.begin(), idx.end());

    std::vector<ProposalRecord> out;
    out.reserve(want);
    for (std::size_t i : idx) out.push_back(negatives[i]);
    return out;
}

} // namespace detpro::geometry
