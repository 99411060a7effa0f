#include "detpro/synthdata.hpp"

#include <cmath>
#include <string>

#include "detpro/errors.hpp"
#include "detpro/rng.hpp"

namespace detpro::synth {

using geometry::Box;
using geometry::ClassSplit;
using geometry::RecordKind;

namespace {

constexpr double kGtOrigin = 10.0;
constexpr double kGtSize = 20.0;

// Seed streams per purpose so per-class generation can be sharded.
constexpr std::uint64_t kStreamPositives = 0x1000;
constexpr std::uint64_t kStreamGroundTruth = 0x2000;
constexpr std::uint64_t kStreamNegatives = 0x3000;
constexpr std::uint64_t kStreamClutter = 0x4000;

std::vector<double> normalized(std::vector<double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    double n = std::sqrt(sq);
    if (n == 0.0) throw data_error("synth: zero-norm vector");
    for (double& x : v) x /= n;
    return v;
}

// Solves G x = b for symmetric positive definite G (in-place Cholesky).
Matrix cholesky_solve(Matrix g, const Matrix& b) {
    std::size_t n = g.rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = g.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= g.at(i, k) * g.at(j, k);
            if (i == j) {
                if (s <= 0.0) throw data_error("synth: token Gram matrix is not positive definite");
                g.at(i, i) = std::sqrt(s);
            } else {
                g.at(i, j) = s / g.at(j, j);
            }
        }
    }
    Matrix x = b; // n x m
    for (std::size_t col = 0; col < x.cols; ++col) {
        for (std::size_t i = 0; i < n; ++i) { // forward
            double s = x.at(i, col);
            for (std::size_t k = 0; k < i; ++k) s -= g.at(i, k) * x.at(k, col);
            x.at(i, col) = s / g.at(i, i);
        }
        for (std::size_t ii = n; ii > 0; --ii) { // backward
            std::size_t i = ii - 1;
            double s = x.at(i, col);
            for (std::size_t k = i + 1; k < n; ++k) s -= g.at(k, i) * x.at(k, col);
            x.at(i, col) = s / g.at(i, i);
        }
    }
    return x;
}

std::string image_of(int class_id) { return "img_" + std::to_string(class_id); }

// A same-size box slid along x so that IoU against the planted ground truth
// equals q: overlap/(2*size - overlap) = q gives offset size*(1-q)/(1+q).
// The offset is shrunk by one part in 1e9 so the realized IoU rounds to q
// from above; a value one ulp below q would fall out of its band.
Box box_at_iou(const Box& gt, double q) {
    double size = gt.x2 - gt.x1;
    double offset = size * (1.0 - q) / (1.0 + q) * (1.0 - 1e-9);
    return Box{gt.x1 + offset, gt.y1, gt.x2 + offset, gt.y2};
}

std::vector<double> noisy_embedding(const std::vector<double>& direction, double sigma,
                                    SeededRng& rng) {
    if (sigma == 0.0) return direction;
    std::vector<double> f(direction.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = direction[i] + sigma * rng.normal();
    return normalized(std::move(f));
}

} // namespace

PlantedWorld gen_world(const WorldParams& params, const encoder::FrozenTextEncoder& enc) {
    std::size_t n_class = params.base_classes + params.novel_classes;
    if (params.base_classes < 2) throw config_error("gen_world: need at least two base classes");
    if (n_class > enc.word_dim())
        throw config_error("gen_world: class count " + std::to_string(n_class) +
                           " exceeds word_dim " + std::to_string(enc.word_dim()) +
                           "; the planted bridge would have no exact solution");
    if (!(params.rho > 0.0 && params.rho < 1.0))
        throw config_error("gen_world: rho must lie in (0,1)");
    if (params.sigma0 < 0.0) throw config_error("gen_world: sigma0 must be nonnegative");
    if (enc.max_len() < params.oracle_length + 1)
        throw config_error("gen_world: encoder max_len too small for the oracle context");

    PlantedWorld world;
    world.params = params;
    world.gt_box = Box{kGtOrigin, kGtOrigin, kGtOrigin + kGtSize, kGtOrigin + kGtSize};

    std::size_t word_dim = enc.word_dim();
    SeededRng rng(params.seed);

    world.tokens = prompt::ClassTokenTable(word_dim);
    for (std::size_t c = 0; c < n_class; ++c) {
        std::vector<double> tok(word_dim);
        for (double& v : tok) v = rng.normal();
        tok = normalized(std::move(tok));
        ClassSplit split = c < params.base_classes ? ClassSplit::base : ClassSplit::novel;
        world.tokens.add(static_cast<int>(c), split, std::move(tok));
    }

    world.oracle_context = prompt::init_context(params.oracle_length, word_dim,
                                                params.oracle_std, rng.next_u64());

    // Background clutter span: orthogonal to how class embeddings spread
    // around their mean under the skeleton (all-zero) context. Backgrounds
    // concentrated there score near-uniformly across classes from the start,
    // so the background objective never needs to trade away class
    // separation.
    std::size_t embed_dim = enc.embed_dim();
    std::vector<std::vector<double>> image_basis;
    {
        prompt::PromptContext skeleton;
        skeleton.vectors = Matrix(params.oracle_length, word_dim);
        std::vector<std::vector<double>> outs;
        std::vector<double> mean(embed_dim, 0.0);
        for (std::size_t c = 0; c < n_class; ++c) {
            Matrix seq = prompt::assemble(skeleton, world.tokens.token(static_cast<int>(c)),
                                          params.token_position);
            std::vector<double> t = enc.encode(seq);
            for (std::size_t e = 0; e < embed_dim; ++e) mean[e] += t[e];
            outs.push_back(std::move(t));
        }
        for (double& v : mean) v /= static_cast<double>(n_class);
        for (std::vector<double>& t : outs) {
            for (std::size_t e = 0; e < embed_dim; ++e) t[e] -= mean[e];
            for (const std::vector<double>& prev : image_basis) {
                double dot = 0.0;
                for (std::size_t e = 0; e < embed_dim; ++e) dot += t[e] * prev[e];
                for (std::size_t e = 0; e < embed_dim; ++e) t[e] -= dot * prev[e];
            }
            double sq = 0.0;
            for (double x : t) sq += x * x;
            if (std::sqrt(sq) < 1e-9) continue;
            for (double& x : t) x /= std::sqrt(sq);
            image_basis.push_back(std::move(t));
        }
    }
    std::size_t null_dim = embed_dim - image_basis.size();
    bool use_null_space = null_dim >= 1;
    std::size_t clutter_dim =
        use_null_space ? std::min(params.clutter_dim, null_dim) : params.clutter_dim;
    if (clutter_dim < 1 || clutter_dim > embed_dim)
        throw config_error("gen_world: bad clutter dimension");
    SeededRng clutter_rng(mix_seed(params.seed, kStreamClutter));
    world.clutter_basis = Matrix(clutter_dim, embed_dim);
    for (std::size_t r = 0; r < clutter_dim; ++r) {
        std::vector<double> v(embed_dim);
        for (;;) {
            for (double& x : v) x = clutter_rng.normal();
            if (use_null_space) {
                for (const std::vector<double>& prev : image_basis) {
                    double dot = 0.0;
                    for (std::size_t e = 0; e < embed_dim; ++e) dot += v[e] * prev[e];
                    for (std::size_t e = 0; e < embed_dim; ++e) v[e] -= dot * prev[e];
                }
            }
            for (std::size_t p = 0; p < r; ++p) {
                const double* prev = world.clutter_basis.row(p);
                double dot = 0.0;
                for (std::size_t e = 0; e < embed_dim; ++e) dot += v[e] * prev[e];
                for (std::size_t e = 0; e < embed_dim; ++e) v[e] -= dot * prev[e];
            }
            double sq = 0.0;
            for (double x : v) sq += x * x;
            if (std::sqrt(sq) > 1e-6) {
                for (double& x : v) x /= std::sqrt(sq);
                break;
            }
        }
        for (std::size_t e = 0; e < embed_dim; ++e) world.clutter_basis.at(r, e) = v[e];
    }

    // Encoder outputs under the hidden oracle context become the targets the
    // bridge must reproduce.
    Matrix targets(n_class, enc.embed_dim());
    for (std::size_t c = 0; c < n_class; ++c) {
        Matrix seq = prompt::assemble(world.oracle_context,
                                      world.tokens.token(static_cast<int>(c)),
                                      params.token_position);
        std::vector<double> t = enc.encode(seq);
        for (std::size_t e = 0; e < t.size(); ++e) targets.at(c, e) = t[e];
    }

    // Minimum-norm bridge with bridge * w_c = target_c, solved through the
    // class Gram matrix. Exact whenever the class count stays within
    // word_dim.
    Matrix tokens_mat(n_class, word_dim);
    for (std::size_t c = 0; c < n_class; ++c) {
        const std::vector<double>& tok = world.tokens.token(static_cast<int>(c));
        for (std::size_t j = 0; j < word_dim; ++j) tokens_mat.at(c, j) = tok[j];
    }
    Matrix gram = matmul_nt(tokens_mat, tokens_mat);          // C x C
    Matrix y = cholesky_solve(gram, targets);                 // C x D_e
    world.bridge = matmul_tn(y, tokens_mat);                  // D_e x D_w

    for (std::size_t c = 0; c < n_class; ++c) {
        std::vector<double> u(enc.embed_dim(), 0.0);
        const std::vector<double>& tok = world.tokens.token(static_cast<int>(c));
        for (std::size_t e = 0; e < u.size(); ++e) {
            const double* mrow = world.bridge.row(e);
            double s = 0.0;
            for (std::size_t j = 0; j < word_dim; ++j) s += mrow[j] * tok[j];
            u[e] = s;
        }
        world.directions.push_back(normalized(std::move(u)));
    }
    return world;
}

std::vector<ProposalRecord> gen_ground_truths(const PlantedWorld& world) {
    std::vector<ProposalRecord> out;
    for (std::size_t c = 0; c < world.class_count(); ++c) {
        int id = static_cast<int>(c);
        SeededRng rng(mix_seed(world.params.seed, kStreamGroundTruth + c));
        ProposalRecord rec;
        rec.id = "gt_" + std::to_string(id);
        rec.image_id = image_of(id);
        rec.box = world.gt_box;
        rec.kind = RecordKind::ground_truth;
        rec.label = id;
        rec.split = world.tokens.split(id);
        rec.embedding = noisy_embedding(world.directions[c], world.params.sigma0, rng);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<ProposalRecord> gen_positives(const PlantedWorld& world, int class_id, std::size_t n,
                                          const std::vector<double>& iou_levels) {
    if (iou_levels.empty()) throw config_error("gen_positives: no IoU levels");
    for (double q : iou_levels)
        if (!(q >= 0.5 && q <= 1.0))
            throw config_error("gen_positives: IoU levels must lie in [0.5, 1.0]");
    if (!world.tokens.contains(class_id))
        throw data_error("gen_positives: unknown class id " + std::to_string(class_id));

    SeededRng rng(mix_seed(world.params.seed,
                           kStreamPositives + static_cast<std::uint64_t>(class_id)));
    std::vector<ProposalRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double q = iou_levels[i % iou_levels.size()];
        double sigma = world.params.sigma0 * (1.0 + world.params.lambda * (1.0 - q));
        ProposalRecord rec;
        rec.id = "pos_" + std::to_string(class_id) + "_" + std::to_string(i);
        rec.image_id = image_of(class_id);
        rec.box = box_at_iou(world.gt_box, q);
        rec.kind = RecordKind::region_proposal;
        rec.split = world.tokens.split(class_id);
        rec.embedding =
            noisy_embedding(world.directions[static_cast<std::size_t>(class_id)], sigma, rng);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<ProposalRecord> gen_negatives(const PlantedWorld& world, std::size_t n) {
    constexpr std::size_t kMaxAttempts = 1000000;
    SeededRng rng(mix_seed(world.params.seed, kStreamNegatives));
    std::size_t embed_dim = world.directions.empty() ? 0 : world.directions.front().size();
    std::size_t clutter_dim = world.clutter_basis.rows;

    std::vector<ProposalRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> f;
        bool accepted = false;
        for (std::size_t attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
            // candidate near the clutter span plus a small isotropic term
            std::vector<double> cand(embed_dim, 0.0);
            if (clutter_dim > 0) {
                for (std::size_t r = 0; r < clutter_dim; ++r) {
                    double weight = rng.normal();
                    const double* row = world.clutter_basis.row(r);
                    for (std::size_t e = 0; e < embed_dim; ++e) cand[e] += weight * row[e];
                }
                for (std::size_t e = 0; e < embed_dim; ++e)
                    cand[e] += world.params.clutter_spread * rng.normal();
            } else {
                for (double& v : cand) v = rng.normal();
            }
            cand = normalized(std::move(cand));
            double worst = -1.0;
            for (const std::vector<double>& u : world.directions) {
                double dot = 0.0;
                for (std::size_t e = 0; e < embed_dim; ++e) dot += cand[e] * u[e];
                worst = std::max(worst, dot);
            }
            if (worst < world.params.rho) {
                f = std::move(cand);
                accepted = true;
            }
        }
        if (!accepted)
            throw data_error("gen_negatives: rejection budget exhausted; "
                             "raise rho or embed_dim");

        int host_class = static_cast<int>(i % world.class_count());
        double q = 0.45 * rng.uniform(); // below the 0.5 partition threshold
        ProposalRecord rec;
        rec.id = "neg_" + std::to_string(i);
        rec.image_id = image_of(host_class);
        rec.box = box_at_iou(world.gt_box, q);
        rec.kind = RecordKind::region_proposal;
        rec.split = world.tokens.split(host_class);
        rec.embedding = std::move(f);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<ProposalRecord> gen_dataset(const PlantedWorld& world, std::size_t pos_per_class,
                                        std::size_t negatives,
                                        const std::vector<double>& iou_levels) {
    std::vector<ProposalRecord> out = gen_ground_truths(world);
    for (std::size_t c = 0; c < world.class_count(); ++c) {
        std::vector<ProposalRecord> pos =
            gen_positives(world, static_cast<int>(c), pos_per_class, iou_levels);
        out.insert(out.end(), std::make_move_iterator(pos.begin()),
                   std::make_move_iterator(pos.end()));
    }
    std::vector<ProposalRecord> neg = gen_negatives(world, negatives);
    out.insert(out.end(), std::make_move_iterator(neg.begin()),
               std::make_move_iterator(neg.end()));
    return out;
}

} // namespace detpro::synth
