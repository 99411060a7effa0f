#include "detpro/losses.hpp"

#include <algorithm>
#include <cmath>

#include "detpro/errors.hpp"

namespace detpro::losses {

Temperature::Temperature(double value) : value_(value) {
    if (!(value > 0.0) || !std::isfinite(value))
        throw config_error("temperature must be positive and finite");
}

namespace {

// Scale-free direction: f divided by its max-magnitude component. The ratios
// f_i / f_j are invariant under any exactly representable positive rescaling
// of f, which keeps the downstream probabilities bit-identical.
std::vector<double> direction(std::span<const double> f) {
    if (f.empty()) throw data_error("cosine: empty vector");
    double m = 0.0;
    for (double v : f) m = std::max(m, std::fabs(v));
    if (m == 0.0) throw data_error("cosine: zero-norm vector");
    std::vector<double> d(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) d[i] = f[i] / m;
    return d;
}

double cosine_of_direction(const std::vector<double>& d, std::span<const double> t,
                           double& d_norm_out, double& t_norm_out) {
    if (d.size() != t.size()) throw data_error("cosine: dimension mismatch");
    double dot = 0.0, dd = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        dot += d[i] * t[i];
        dd += d[i] * d[i];
        tt += t[i] * t[i];
    }
    if (tt == 0.0) throw data_error("cosine: zero-norm embedding");
    d_norm_out = std::sqrt(dd);
    t_norm_out = std::sqrt(tt);
    return dot / (d_norm_out * t_norm_out);
}

std::vector<double> softmax(std::vector<double> z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

} // namespace

double cosine(std::span<const double> f, std::span<const double> t) {
    std::vector<double> d = direction(f);
    double dn, tn;
    return cosine_of_direction(d, t, dn, tn);
}

std::vector<double> cosine_grad_embedding(std::span<const double> f, std::span<const double> t) {
    std::vector<double> d = direction(f);
    double dn, tn;
    double c = cosine_of_direction(d, t, dn, tn);
    // d cos / d t = (d_hat - cos * t_hat) / ||t||
    std::vector<double> g(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
        g[i] = (d[i] / dn - c * t[i] / tn) / tn;
    return g;
}

ScoreVector class_probs(std::span<const double> f, const std::vector<ClassEmbedding>& embeddings,
                        Temperature tau) {
    if (embeddings.empty()) throw data_error("class_probs: no class embeddings");
    std::vector<double> d = direction(f);
    std::vector<double> z(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        double dn, tn;
        z[i] = cosine_of_direction(d, embeddings[i].vector, dn, tn) / tau.value();
    }
    return ScoreVector{softmax(std::move(z))};
}

double positive_loss(std::span<const double> f, int label,
                     const std::vector<ClassEmbedding>& base_embeddings, Temperature tau) {
    std::size_t idx = base_embeddings.size();
    for (std::size_t i = 0; i < base_embeddings.size(); ++i)
        if (base_embeddings[i].class_id == label) { idx = i; break; }
    if (idx == base_embeddings.size())
        throw data_error("positive_loss: label " + std::to_string(label) +
                         " is not a base class");
    ScoreVector probs = class_probs(f, base_embeddings, tau);
    return -clamped_log(probs[idx]);
}

double soft_bg_loss(std::span<const double> f, const std::vector<ClassEmbedding>& base_embeddings,
                    Temperature tau) {
    if (base_embeddings.size() < 2)
        throw data_error("soft_bg_loss: needs at least two base classes");
    return soft_bg_loss_from_probs(class_probs(f, base_embeddings, tau));
}

double soft_bg_loss_from_probs(const ScoreVector& probs) {
    if (probs.size() < 2) throw data_error("soft_bg_loss: needs at least two classes");
    double w = 1.0 / static_cast<double>(probs.size());
    double sum = 0.0;
    for (double p : probs.p) sum += clamped_log(p);
    return -w * sum;
}

double learnable_bg_prob(std::span<const double> f,
                         const std::vector<ClassEmbedding>& base_embeddings,
                         std::span<const double> bg_embedding, Temperature tau) {
    std::vector<double> d = direction(f);
    std::vector<double> z;
    z.reserve(base_embeddings.size() + 1);
    double dn, tn;
    for (const ClassEmbedding& e : base_embeddings)
        z.push_back(cosine_of_direction(d, e.vector, dn, tn) / tau.value());
    z.push_back(cosine_of_direction(d, bg_embedding, dn, tn) / tau.value());
    return softmax(std::move(z)).back();
}

double learnable_bg_loss(double p_bg) {
    if (!(p_bg > 0.0) || p_bg > 1.0)
        throw data_error("learnable_bg_loss: probability outside (0,1]");
    return -clamped_log(p_bg);
}

BgMode bg_mode_from(const std::string& name) {
    if (name == "soft_bg") return BgMode::soft_bg;
    if (name == "learnable_bg") return BgMode::learnable_bg;
    if (name == "no_bg") return BgMode::no_bg;
    throw config_error("unknown bg_mode '" + name + "'");
}

std::string to_string(BgMode mode) {
    switch (mode) {
        case BgMode::soft_bg: return "soft_bg";
        case BgMode::learnable_bg: return "learnable_bg";
        default: return "no_bg";
    }
}

double group_loss(const std::vector<LabeledEmbedding>& positives,
                  const std::vector<std::vector<double>>& negatives, BgMode mode,
                  const std::vector<ClassEmbedding>& base_embeddings,
                  const std::optional<std::vector<double>>& bg_embedding, Temperature tau) {
    if (positives.empty()) throw data_error("group_loss: empty positive set");
    if (mode != BgMode::no_bg && negatives.empty())
        throw data_error("group_loss: empty negative set");
    if (mode == BgMode::learnable_bg && !bg_embedding)
        throw data_error("group_loss: learnable_bg mode needs a background embedding");

    double total = 0.0;
    if (mode != BgMode::no_bg) {
        double neg_sum = 0.0;
        for (const std::vector<double>& f : negatives) {
            if (mode == BgMode::soft_bg)
                neg_sum += soft_bg_loss(f, base_embeddings, tau);
            else
                neg_sum += learnable_bg_loss(
                    learnable_bg_prob(f, base_embeddings, *bg_embedding, tau));
        }
        total += neg_sum / static_cast<double>(negatives.size());
    }
    double pos_sum = 0.0;
    for (const LabeledEmbedding& p : positives)
        pos_sum += positive_loss(p.embedding, p.label, base_embeddings, tau);
    total += pos_sum / static_cast<double>(positives.size());
    return total;
}

} // namespace detpro::losses
