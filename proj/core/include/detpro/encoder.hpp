#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detpro/matrix.hpp"
#include "detpro/prompt.hpp"

namespace detpro::encoder {

struct ClassEmbedding {
    int class_id = -1;
    std::vector<double> vector; // unit L2 norm
};

// Intermediate activations of one encode() call, kept so backward() can run
// without recomputation.
struct EncodeCache {
    Matrix h0;        // input + positional encodings
    Matrix attn;      // row-softmax attention weights
    Matrix values;    // h0 * w_value
    Matrix mixed;     // attn * values
    Matrix h1;        // attention mixing output
    Matrix hidden;    // tanh activations of the feed-forward block
    Matrix h2;        // post-feed-forward residual stream
    std::vector<double> pooled;     // mean over positions
    std::vector<double> projected;  // pooled * w_proj, before normalization
    double norm = 0.0;
    std::vector<double> output;     // unit-norm embedding
};

// Frozen deterministic stand-in for a pretrained text encoder: positional
// encodings, one softmax self-attention mixing layer, a position-wise
// two-layer tanh feed-forward block, mean-pool readout, linear projection to
// the embedding dimension and L2 normalization. Smooth everywhere and
// differentiable with respect to the input sequence; parameters are drawn
// once from a seeded generator and never change.
class FrozenTextEncoder {
public:
    FrozenTextEncoder(std::uint64_t seed, std::size_t word_dim, std::size_t embed_dim,
                      std::size_t max_len);

    std::size_t word_dim() const { return word_dim_; }
    std::size_t embed_dim() const { return embed_dim_; }
    std::size_t max_len() const { return max_len_; }
    std::uint64_t seed() const { return seed_; }

    // sequence: n x word_dim, 1 <= n <= max_len. Returns a unit-norm vector.
    std::vector<double> encode(const Matrix& sequence) const;
    std::vector<double> encode(const Matrix& sequence, EncodeCache& cache) const;

    // Reverse-mode gradient of (output . grad_output) with respect to the
    // input sequence. The encoder parameters are frozen, so no parameter
    // gradients exist.
    Matrix backward(const Matrix& sequence, const EncodeCache& cache,
                    const std::vector<double>& grad_output) const;

private:
    std::uint64_t seed_;
    std::size_t word_dim_, embed_dim_, max_len_;
    Matrix pos_;                       // max_len x word_dim
    Matrix w_query_, w_key_, w_value_, w_out_; // word_dim x word_dim
    Matrix w_ff1_;                     // word_dim x ff_dim
    std::vector<double> b_ff1_;
    Matrix w_ff2_;                     // ff_dim x word_dim
    std::vector<double> b_ff2_;
    Matrix w_proj_;                    // word_dim x embed_dim
    double attn_scale_ = 1.0;
};

// Assembles and encodes one prompt per requested class id, in request order.
std::vector<ClassEmbedding> encode_class_set(const FrozenTextEncoder& enc,
                                             const prompt::PromptContext& context,
                                             const prompt::ClassTokenTable& table,
                                             prompt::TokenPosition pos,
                                             const std::vector<int>& subset);

// External class-embedding file (token-table layout at embedding dimension):
// header "D_e <int>", then "<class_id> <split> <reals...>" per line. Lets an
// evaluation run bypass the encoder with embeddings computed elsewhere.
void write_class_embeddings(const std::string& path,
                            const std::vector<ClassEmbedding>& embeddings,
                            const prompt::ClassTokenTable& table);
std::vector<ClassEmbedding> read_class_embeddings(const std::string& path);

} // namespace detpro::encoder
