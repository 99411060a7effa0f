#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "detpro/geometry.hpp" // ClassSplit
#include "detpro/matrix.hpp"

namespace detpro::prompt {

using geometry::ClassSplit;

enum class TokenPosition { front, middle, end };

TokenPosition token_position_from(const std::string& name);
std::string to_string(TokenPosition pos);

// The shared learnable context vectors [v_1 .. v_L], each of dimension
// word_dim. This is the only trainable state (plus an optional background
// context of the same shape).
struct PromptContext {
    Matrix vectors; // L x word_dim
    bool trainable = true;

    std::size_t length() const { return vectors.rows; }
    std::size_t word_dim() const { return vectors.cols; }
};

// A class-token-free context whose encoding serves as the background
// embedding in learnable-background mode.
using BackgroundContext = PromptContext;

// Fixed per-class token vectors with their base/novel split.
class ClassTokenTable {
public:
    ClassTokenTable() = default;
    explicit ClassTokenTable(std::size_t word_dim) : word_dim_(word_dim) {}

    void add(int class_id, ClassSplit split, std::vector<double> token);

    bool contains(int class_id) const { return entries_.count(class_id) != 0; }
    const std::vector<double>& token(int class_id) const;
    ClassSplit split(int class_id) const;
    std::size_t word_dim() const { return word_dim_; }
    std::size_t size() const { return entries_.size(); }

    std::vector<int> base_ids() const;
    std::vector<int> novel_ids() const;
    std::vector<int> all_ids() const;

private:
    struct Entry {
        ClassSplit split;
        std::vector<double> token;
    };
    std::size_t word_dim_ = 0;
    std::map<int, Entry> entries_; // ordered for deterministic iteration
};

// Context entries drawn i.i.d. from N(0, init_std^2), deterministic per seed.
PromptContext init_context(std::size_t length, std::size_t word_dim, double init_std,
                           std::uint64_t seed);

// Prompt assembly: the class token is placed at the configured position
// (end -> [v_1..v_L, w_c], front -> [w_c, v_1..v_L], middle -> after the
// first floor(L/2) context vectors). Pure concatenation, bitwise copies.
Matrix assemble(const PromptContext& context, const std::vector<double>& class_token,
                TokenPosition pos);

// Index of the class token row produced by assemble() for this position.
std::size_t token_row(std::size_t context_length, TokenPosition pos);

// Background prompts have no class token: the sequence is the context itself.
Matrix assemble_bg(const BackgroundContext& bg);

// Elementwise mean of the shared context vectors over groups. Accumulates in
// extended precision so K identical inputs reproduce the input bit-exactly.
PromptContext ensemble(const std::vector<PromptContext>& contexts);

// Token table file: header "D_w <int>", then "<class_id> <split> <reals...>"
// per line. Reals are shortest-round-trip doubles.
void write_token_table(const std::string& path, const ClassTokenTable& table);
ClassTokenTable read_token_table(const std::string& path);

} // namespace detpro::prompt
