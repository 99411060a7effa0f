#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "detpro/errors.hpp"
#include "detpro/geometry.hpp"
#include "detpro/rng.hpp"

using namespace detpro;
using namespace detpro::geometry;

namespace {

ProposalRecord make_gt(const std::string& id, const std::string& image, Box box, int label) {
    ProposalRecord r;
    r.id = id;
    r.image_id = image;
    r.box = box;
    r.kind = RecordKind::ground_truth;
    r.label = label;
    return r;
}

ProposalRecord make_proposal(const std::string& id, const std::string& image, Box box) {
    ProposalRecord r;
    r.id = id;
    r.image_id = image;
    r.box = box;
    return r;
}

// Independent partition oracle: clamp-based IoU, quadratic scan, threshold.
double oracle_iou(const Box& a, const Box& b) {
    double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    double inter = w * h;
    double area_a = std::max(0.0, a.x2 - a.x1) * std::max(0.0, a.y2 - a.y1);
    double area_b = std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
    double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct OracleResult {
    std::set<std::string> positive_ids;
    std::set<std::string> negative_ids;
    std::map<std::string, int> labels;
    std::map<std::string, double> max_ious;
};

OracleResult oracle_partition(const std::vector<ProposalRecord>& proposals,
                              const std::vector<ProposalRecord>& gts, double theta) {
    OracleResult out;
    for (const ProposalRecord& gt : gts) out.positive_ids.insert(gt.id);
    for (const ProposalRecord& p : proposals) {
        double best = 0.0;
        std::string best_id;
        int best_label = -1;
        for (const ProposalRecord& gt : gts) {
            if (gt.image_id != p.image_id) continue;
            double v = oracle_iou(p.box, gt.box);
            if (v > best || (v == best && v > 0.0 && !best_id.empty() && gt.id < best_id)) {
                best = v;
                best_id = gt.id;
                best_label = *gt.label;
            }
        }
        out.max_ious[p.id] = best;
        if (best >= theta && !best_id.empty()) {
            out.positive_ids.insert(p.id);
            out.labels[p.id] = best_label;
        } else {
            out.negative_ids.insert(p.id);
        }
    }
    return out;
}

} // namespace

TEST_CASE("iou closed-form values") {
    CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == doctest::Approx(1.0));
    CHECK(iou({0, 0, 10, 10}, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
    CHECK(iou({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
    CHECK(iou({0, 0, 10, 10}, {1, 0, 11, 10}) == doctest::Approx(90.0 / 110.0));
    CHECK(iou({0, 0, 10, 10}, {8, 8, 18, 18}) == doctest::Approx(4.0 / 196.0));
}

TEST_CASE("iou degenerate boxes") {
    // zero-area boxes: zero union rule
    CHECK(iou({1, 1, 1, 1}, {2, 2, 2, 2}) == 0.0);
    CHECK(iou({1, 1, 1, 1}, {1, 1, 1, 1}) == 0.0);
    CHECK(iou({0, 0, 0, 10}, {0, 0, 10, 10}) == 0.0);
    CHECK_THROWS_AS(iou({5, 0, 0, 10}, {0, 0, 1, 1}), data_error);
}

TEST_CASE("iou symmetry and range over random pairs") {
    SeededRng rng(42);
    for (int i = 0; i < 500; ++i) {
        auto rand_box = [&rng]() {
            double x = 50 * rng.uniform(), y = 50 * rng.uniform();
            return Box{x, y, x + 30 * rng.uniform(), y + 30 * rng.uniform()};
        };
        Box a = rand_box(), b = rand_box();
        double v = iou(a, b);
        CHECK(v == iou(b, a));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Box c{3, 4, 9, 11};
    CHECK(iou(c, c) == 1.0);
}

TEST_CASE("partition basic examples") {
    std::vector<ProposalRecord> gts = {make_gt("g0", "img", {0, 0, 10, 10}, 7)};

    SUBCASE("high-IoU proposal is positive with the inherited label") {
        auto part = partition({make_proposal("p0", "img", {1, 0, 11, 10})}, gts, 0.5);
        REQUIRE(part.positives.size() == 2); // gt + proposal
        CHECK(part.negatives.empty());
        CHECK(part.positives[1].id == "p0");
        CHECK(part.positives[1].label == 7);
        CHECK(part.positives[1].max_iou == doctest::Approx(90.0 / 110.0));
        CHECK(part.positives[0].max_iou == 1.0); // ground truth
    }
    SUBCASE("low-IoU proposal is negative") {
        auto part = partition({make_proposal("p0", "img", {8, 8, 18, 18})}, gts, 0.5);
        CHECK(part.positives.size() == 1);
        REQUIRE(part.negatives.size() == 1);
        CHECK(!part.negatives[0].label);
        CHECK(part.negatives[0].max_iou == doctest::Approx(4.0 / 196.0));
    }
    SUBCASE("empty proposal list gives P = ground truths") {
        auto part = partition({}, gts, 0.5);
        CHECK(part.positives.size() == 1);
        CHECK(part.negatives.empty());
    }
    SUBCASE("proposal in an image without ground truths is negative with max_iou 0") {
        auto part = partition({make_proposal("p0", "other", {0, 0, 10, 10})}, gts, 0.5);
        REQUIRE(part.negatives.size() == 1);
        CHECK(part.negatives[0].max_iou == 0.0);
    }
    SUBCASE("argmax tie breaks to the lowest ground-truth id") {
        std::vector<ProposalRecord> two = {make_gt("g9", "img", {0, 0, 10, 10}, 1),
                                           make_gt("g1", "img", {10, 0, 20, 10}, 2)};
        // centered between the two, equal IoU against both
        auto part = partition({make_proposal("p0", "img", {5, 0, 15, 10})}, two, 0.3);
        REQUIRE(part.positives.size() == 3);
        CHECK(part.positives[2].label == 2); // g1 < g9
    }
    SUBCASE("invalid threshold") {
        CHECK_THROWS_AS(partition({}, gts, 0.0), config_error);
        CHECK_THROWS_AS(partition({}, gts, 1.0), config_error);
    }
    SUBCASE("ground truth without label is rejected") {
        ProposalRecord bad = make_proposal("b", "img", {0, 0, 1, 1});
        bad.kind = RecordKind::ground_truth;
        CHECK_THROWS_AS(partition({}, {bad}, 0.5), data_error);
    }
}

TEST_CASE("partition matches the brute-force oracle on 200 random scenes") {
    SeededRng rng(2024);
    for (int scene = 0; scene < 200; ++scene) {
        std::vector<ProposalRecord> gts, proposals;
        std::size_t n_gt = 1 + rng.uniform_int(8);
        std::size_t n_prop = rng.uniform_int(43);
        for (std::size_t i = 0; i < n_gt; ++i) {
            double x = 60 * rng.uniform(), y = 60 * rng.uniform();
            double w = 5 + 25 * rng.uniform(), h = 5 + 25 * rng.uniform();
            gts.push_back(make_gt("g" + std::to_string(i), "img" + std::to_string(i % 3),
                                  {x, y, x + w, y + h}, static_cast<int>(i)));
        }
        for (std::size_t i = 0; i < n_prop; ++i) {
            double x = 60 * rng.uniform(), y = 60 * rng.uniform();
            double w = 5 + 25 * rng.uniform(), h = 5 + 25 * rng.uniform();
            proposals.push_back(make_proposal("p" + std::to_string(i),
                                              "img" + std::to_string(rng.uniform_int(3)),
                                              {x, y, x + w, y + h}));
        }
        auto part = partition(proposals, gts, 0.5);
        auto oracle = oracle_partition(proposals, gts, 0.5);

        std::set<std::string> got_pos, got_neg;
        for (const auto& r : part.positives) {
            got_pos.insert(r.id);
            if (r.kind == RecordKind::region_proposal) {
                CHECK(*r.label == oracle.labels.at(r.id));
                CHECK(r.max_iou == oracle.max_ious.at(r.id));
            }
        }
        for (const auto& r : part.negatives) {
            got_neg.insert(r.id);
            CHECK(r.max_iou == oracle.max_ious.at(r.id));
        }
        CHECK(got_pos == oracle.positive_ids);
        CHECK(got_neg == oracle.negative_ids);
    }
}

TEST_CASE("grade intervals and assignment") {
    std::vector<ProposalRecord> gts = {make_gt("g0", "img", {0, 0, 10, 10}, 0)};
    ProposalPartition part = partition({}, gts, 0.5);

    SUBCASE("five groups over the default range") {
        auto groups = grade(part, 0.5, 1.0, 0.1);
        REQUIRE(groups.size() == 5);
        CHECK(groups[0].lo == doctest::Approx(0.5));
        CHECK(groups[4].hi == doctest::Approx(1.0));
        // the ground truth (max_iou 1.0) lands in the closed top band
        CHECK(groups[4].members.size() == 1);
        for (int k = 0; k < 4; ++k) CHECK(groups[k].members.empty());
    }
    SUBCASE("exact boundary goes to the upper band") {
        ProposalRecord p = make_proposal("p0", "img", {0, 0, 10, 10});
        p.max_iou = 0.6;
        p.label = 0;
        ProposalPartition two = part;
        two.positives.push_back(p);
        auto groups = grade(two, 0.5, 1.0, 0.1);
        CHECK(groups[1].members.size() == 1); // [0.6, 0.7)
        CHECK(groups[0].members.empty());
    }
    SUBCASE("positives below the range are dropped; disjoint cover otherwise") {
        SeededRng rng(5);
        ProposalPartition synth = part;
        for (int i = 0; i < 200; ++i) {
            ProposalRecord p = make_proposal("p" + std::to_string(i), "img", {0, 0, 10, 10});
            p.max_iou = 0.3 + 0.7 * rng.uniform();
            p.label = 0;
            synth.positives.push_back(p);
        }
        auto groups = grade(synth, 0.5, 1.0, 0.1);
        std::size_t expected = 0;
        for (const auto& r : synth.positives)
            if (r.max_iou >= 0.5 && r.max_iou <= 1.0) ++expected;
        std::set<std::string> seen;
        std::size_t total = 0;
        for (const auto& g : groups) {
            for (const auto& m : g.members) {
                CHECK(m.max_iou >= g.lo);
                if (&g != &groups.back()) CHECK(m.max_iou < g.hi);
                CHECK(seen.insert(m.id).second); // pairwise disjoint
                ++total;
            }
        }
        CHECK(total == expected);
    }
    SUBCASE("gt_in_all_groups duplicates ground truths into every band") {
        auto groups = grade(part, 0.5, 1.0, 0.1, true);
        for (const auto& g : groups) CHECK(g.members.size() == 1);
    }
    SUBCASE("bad parameters") {
        CHECK_THROWS_AS(grade(part, 1.0, 0.5, 0.1), config_error);
        CHECK_THROWS_AS(grade(part, 0.5, 1.0, 0.0), config_error);
        CHECK_THROWS_AS(grade(part, 0.5, 1.0, 0.15), config_error);
    }
}

TEST_CASE("subsample_negatives") {
    std::vector<ProposalRecord> negatives;
    for (int i = 0; i < 100; ++i)
        negatives.push_back(make_proposal("n" + std::to_string(i), "img", {0, 0, 1, 1}));

    SUBCASE("cardinality and subset") {
        auto sampled = subsample_negatives(negatives, 0.10, 9);
        CHECK(sampled.size() == 10);
        std::set<std::string> all;
        for (const auto& r : negatives) all.insert(r.id);
        for (const auto& r : sampled) CHECK(all.count(r.id) == 1);
    }
    SUBCASE("fraction one is the identity, order preserved") {
        auto sampled = subsample_negatives(negatives, 1.0, 9);
        REQUIRE(sampled.size() == negatives.size());
        for (std::size_t i = 0; i < sampled.size(); ++i) CHECK(sampled[i].id == negatives[i].id);
    }
    SUBCASE("same seed twice gives the identical selection") {
        auto a = subsample_negatives(negatives, 0.37, 123);
        auto b = subsample_negatives(negatives, 0.37, 123);
        REQUIRE(a.size() == b.size());
        CHECK(a.size() == 37);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
    }
    SUBCASE("empty input") {
        CHECK(subsample_negatives({}, 0.5, 1).empty());
    }
    SUBCASE("bad fraction") {
        CHECK_THROWS_AS(subsample_negatives(negatives, 0.0, 1), config_error);
        CHECK_THROWS_AS(subsample_negatives(negatives, 1.5, 1), config_error);
    }
}
