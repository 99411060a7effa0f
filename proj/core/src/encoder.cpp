#include "detpro/encoder.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "detpro/errors.hpp"
#include "detpro/rng.hpp"

namespace detpro::encoder {

namespace {

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal(0.0, stddev);
    return m;
}

std::vector<double> gaussian_vector(SeededRng& rng, std::size_t n, double stddev) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, stddev);
    return v;
}

void softmax_rows_inplace(Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = m.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) row[j] /= sum;
    }
}

} // namespace

FrozenTextEncoder::FrozenTextEncoder(std::uint64_t seed, std::size_t word_dim,
                                     std::size_t embed_dim, std::size_t max_len)
    : seed_(seed), word_dim_(word_dim), embed_dim_(embed_dim), max_len_(max_len) {
    if (word_dim < 1 || embed_dim < 1 || max_len < 1)
        throw config_error("encoder: dimensions must be >= 1");

    // Fixed draw order; every scale is part of the encoder's identity. Query
    // and key weights are drawn wide so the attention pattern is strongly
    // content-selective: that coupling between the class token and the
    // context rows is what prompt learning steers.
    SeededRng rng(seed);
    std::size_t ff_dim = 2 * word_dim;
    double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(word_dim));
    double inv_sqrt_ff = 1.0 / std::sqrt(static_cast<double>(ff_dim));
    pos_ = gaussian_matrix(rng, max_len, word_dim, 0.02);
    w_query_ = gaussian_matrix(rng, word_dim, word_dim, 1.4);
    w_key_ = gaussian_matrix(rng, word_dim, word_dim, 1.4);
    // The value map is a low-rank product: word directions near its null
    // space transmit weakly and act mostly by steering attention.
    std::size_t value_rank = word_dim > 4 ? word_dim - std::max<std::size_t>(2, (3 * word_dim) / 8)
                                          : word_dim;
    Matrix value_left = gaussian_matrix(rng, word_dim, value_rank, inv_sqrt_w);
    Matrix value_right =
        gaussian_matrix(rng, value_rank, word_dim, 1.0 / std::sqrt(double(value_rank)));
    w_value_ = matmul(value_left, value_right);
    w_out_ = gaussian_matrix(rng, word_dim, word_dim, 3.0 * inv_sqrt_w);
    w_ff1_ = gaussian_matrix(rng, word_dim, ff_dim, inv_sqrt_w);
    b_ff1_ = gaussian_vector(rng, ff_dim, 0.01);
    w_ff2_ = gaussian_matrix(rng, ff_dim, word_dim, inv_sqrt_ff);
    b_ff2_ = gaussian_vector(rng, word_dim, 0.01);
    w_proj_ = gaussian_matrix(rng, word_dim, embed_dim, inv_sqrt_w);
    attn_scale_ = inv_sqrt_w;
}

std::vector<double> FrozenTextEncoder::encode(const Matrix& sequence) const {
    EncodeCache cache;
    return encode(sequence, cache);
}

std::vector<double> FrozenTextEncoder::encode(const Matrix& sequence, EncodeCache& cache) const {
    std::size_t n = sequence.rows;
    if (n < 1) throw data_error("encode: empty sequence");
    if (n > max_len_)
        throw data_error("encode: sequence length " + std::to_string(n) +
                         " exceeds max_len " + std::to_string(max_len_));
    if (sequence.cols != word_dim_)
        throw data_error("encode: token dimension " + std::to_string(sequence.cols) +
                         " does not match word_dim " + std::to_string(word_dim_));

    cache.h0 = sequence;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = cache.h0.row(i);
        const double* p = pos_.row(i);
        for (std::size_t j = 0; j < word_dim_; ++j) row[j] += p[j];
    }

    Matrix queries = matmul(cache.h0, w_query_);
    Matrix keys = matmul(cache.h0, w_key_);
    cache.values = matmul(cache.h0, w_value_);
    cache.attn = matmul_nt(queries, keys);
    scale_inplace(cache.attn, attn_scale_);
    softmax_rows_inplace(cache.attn);
    cache.mixed = matmul(cache.attn, cache.values);

    // No residual around the mixing layer: token content reaches the pooled
    // readout only through the attention allocation, which is what the
    // learnable context steers.
    cache.h1 = matmul(cache.mixed, w_out_);

    Matrix pre = matmul(cache.h1, w_ff1_);
    cache.hidden = Matrix(n, b_ff1_.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b_ff1_.size(); ++j)
            cache.hidden.at(i, j) = std::tanh(pre.at(i, j) + b_ff1_[j]);

    Matrix ff_out = matmul(cache.hidden, w_ff2_);
    cache.h2 = cache.h1;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = cache.h2.row(i);
        const double* f = ff_out.row(i);
        for (std::size_t j = 0; j < word_dim_; ++j) row[j] += f[j] + b_ff2_[j];
    }

    cache.pooled.assign(word_dim_, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = cache.h2.row(i);
        for (std::size_t j = 0; j < word_dim_; ++j) cache.pooled[j] += row[j];
    }
    double inv_n = 1.0 / static_cast<double>(n);
    for (double& v : cache.pooled) v *= inv_n;

    cache.projected.assign(embed_dim_, 0.0);
    for (std::size_t j = 0; j < word_dim_; ++j) {
        double pj = cache.pooled[j];
        const double* wrow = w_proj_.row(j);
        for (std::size_t e = 0; e < embed_dim_; ++e) cache.projected[e] += pj * wrow[e];
    }

    double sq = 0.0;
    for (double v : cache.projected) sq += v * v;
    cache.norm = std::sqrt(sq);
    if (cache.norm == 0.0) throw data_error("encode: zero-norm projection");
    cache.output.resize(embed_dim_);
    for (std::size_t e = 0; e < embed_dim_; ++e) cache.output[e] = cache.projected[e] / cache.norm;
    return cache.output;
}

Matrix FrozenTextEncoder::backward(const Matrix& sequence, const EncodeCache& cache,
                                   const std::vector<double>& grad_output) const {
    std::size_t n = sequence.rows;
    if (grad_output.size() != embed_dim_)
        throw data_error("backward: gradient dimension mismatch");

    // L2 normalization: d(y/||y||) pulls back as (g - (g.t) t)/||y||.
    double gdott = 0.0;
    for (std::size_t e = 0; e < embed_dim_; ++e) gdott += grad_output[e] * cache.output[e];
    std::vector<double> g_proj(embed_dim_);
    for (std::size_t e = 0; e < embed_dim_; ++e)
        g_proj[e] = (grad_output[e] - gdott * cache.output[e]) / cache.norm;

    std::vector<double> g_pooled(word_dim_, 0.0);
    for (std::size_t j = 0; j < word_dim_; ++j) {
        const double* wrow = w_proj_.row(j);
        double s = 0.0;
        for (std::size_t e = 0; e < embed_dim_; ++e) s += wrow[e] * g_proj[e];
        g_pooled[j] = s;
    }

    double inv_n = 1.0 / static_cast<double>(n);
    Matrix g_h2(n, word_dim_);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < word_dim_; ++j) g_h2.at(i, j) = g_pooled[j] * inv_n;

    // Feed-forward residual block.
    Matrix g_hidden = matmul_nt(g_h2, w_ff2_); // dL/dU = gF * W2^T
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < g_hidden.cols; ++j) {
            double u = cache.hidden.at(i, j);
            g_hidden.at(i, j) *= (1.0 - u * u);
        }
    }
    Matrix g_h1 = g_h2;
    add_inplace(g_h1, matmul_nt(g_hidden, w_ff1_));

    // Attention mixing block (no residual).
    Matrix g_mixed = matmul_nt(g_h1, w_out_);
    Matrix g_attn = matmul_nt(g_mixed, cache.values);
    Matrix g_values = matmul_tn(cache.attn, g_mixed);
    Matrix g_scores(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* a = cache.attn.row(i);
        const double* ga = g_attn.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += ga[j] * a[j];
        double* gs = g_scores.row(i);
        for (std::size_t j = 0; j < n; ++j) gs[j] = a[j] * (ga[j] - dot) * attn_scale_;
    }
    Matrix queries = matmul(cache.h0, w_query_);
    Matrix keys = matmul(cache.h0, w_key_);
    Matrix g_queries = matmul(g_scores, keys);
    Matrix g_keys = matmul_tn(g_scores, queries);

    Matrix g_h0 = matmul_nt(g_queries, w_query_);
    add_inplace(g_h0, matmul_nt(g_keys, w_key_));
    add_inplace(g_h0, matmul_nt(g_values, w_value_));
    return g_h0; // positional encodings are additive constants
}

std::vector<ClassEmbedding> encode_class_set(const FrozenTextEncoder& enc,
                                             const prompt::PromptContext& context,
                                             const prompt::ClassTokenTable& table,
                                             prompt::TokenPosition pos,
                                             const std::vector<int>& subset) {
    std::vector<ClassEmbedding> out;
    out.reserve(subset.size());
    for (int id : subset) {
        Matrix seq = prompt::assemble(context, table.token(id), pos);
        out.push_back(ClassEmbedding{id, enc.encode(seq)});
    }
    return out;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void write_class_embeddings(const std::string& path,
                            const std::vector<ClassEmbedding>& embeddings,
                            const prompt::ClassTokenTable& table) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    std::size_t dim = embeddings.empty() ? 0 : embeddings.front().vector.size();
    os << "D_e " << dim << '\n';
    for (const ClassEmbedding& e : embeddings) {
        os << e.class_id << ' '
           << (table.split(e.class_id) == geometry::ClassSplit::base ? "base" : "novel");
        for (double v : e.vector) os << ' ' << format_double(v);
        os << '\n';
    }
    if (!os) throw data_error("write failed: " + path);
}

std::vector<ClassEmbedding> read_class_embeddings(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open: " + path);
    std::string header_key;
    std::size_t dim = 0;
    if (!(is >> header_key >> dim) || header_key != "D_e")
        throw data_error("class embeddings: bad header in " + path);

    std::vector<ClassEmbedding> out;
    std::string line;
    std::getline(is, line);
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ClassEmbedding e;
        std::string split_name;
        if (!(ls >> e.class_id >> split_name) || (split_name != "base" && split_name != "novel"))
            throw data_error("class embeddings: malformed line " + std::to_string(line_no));
        double v;
        while (ls >> v) e.vector.push_back(v);
        if (e.vector.size() != dim)
            throw data_error("class embeddings: line " + std::to_string(line_no) + " has " +
                             std::to_string(e.vector.size()) + " values, expected " +
                             std::to_string(dim));
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace detpro::encoder
