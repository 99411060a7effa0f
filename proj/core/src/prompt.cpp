#include "detpro/prompt.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "detpro/errors.hpp"
#include "detpro/rng.hpp"

namespace detpro::prompt {

TokenPosition token_position_from(const std::string& name) {
    if (name == "front") return TokenPosition::front;
    if (name == "middle") return TokenPosition::middle;
    if (name == "end") return TokenPosition::end;
    throw config_error("unknown token_position '" + name + "'");
}

std::string to_string(TokenPosition pos) {
    switch (pos) {
        case TokenPosition::front: return "front";
        case TokenPosition::middle: return "middle";
        default: return "end";
    }
}

void ClassTokenTable::add(int class_id, ClassSplit split, std::vector<double> token) {
    if (word_dim_ == 0) word_dim_ = token.size();
    if (token.size() != word_dim_)
        throw data_error("token table: class " + std::to_string(class_id) +
                         " has dimension " + std::to_string(token.size()) +
                         ", expected " + std::to_string(word_dim_));
    if (entries_.count(class_id))
        throw data_error("token table: duplicate class id " + std::to_string(class_id));
    entries_[class_id] = Entry{split, std::move(token)};
}

const std::vector<double>& ClassTokenTable::token(int class_id) const {
    auto it = entries_.find(class_id);
    if (it == entries_.end())
        throw data_error("token table: unknown class id " + std::to_string(class_id));
    return it->second.token;
}

ClassSplit ClassTokenTable::split(int class_id) const {
    auto it = entries_.find(class_id);
    if (it == entries_.end())
        throw data_error("token table: unknown class id " + std::to_string(class_id));
    return it->second.split;
}

std::vector<int> ClassTokenTable::base_ids() const {
    std::vector<int> ids;
    for (const auto& [id, e] : entries_)
        if (e.split == ClassSplit::base) ids.push_back(id);
    return ids;
}

std::vector<int> ClassTokenTable::novel_ids() const {
    std::vector<int> ids;
    for (const auto& [id, e] : entries_)
        if (e.split == ClassSplit::novel) ids.push_back(id);
    return ids;
}

std::vector<int> ClassTokenTable::all_ids() const {
    std::vector<int> ids;
    for (const auto& [id, e] : entries_) ids.push_back(id);
    return ids;
}

PromptContext init_context(std::size_t length, std::size_t word_dim, double init_std,
                           std::uint64_t seed) {
    if (length < 1 || word_dim < 1)
        throw config_error("init_context: context length and word dim must be >= 1");
    if (!(init_std > 0.0))
        throw config_error("init_context: init_std must be positive");
    PromptContext ctx;
    ctx.vectors = Matrix(length, word_dim);
    SeededRng rng(seed);
    for (double& v : ctx.vectors.data) v = rng.normal(0.0, init_std);
    return ctx;
}

std::size_t token_row(std::size_t context_length, TokenPosition pos) {
    switch (pos) {
        case TokenPosition::front: return 0;
        case TokenPosition::middle: return context_length / 2;
        default: return context_length;
    }
}

Matrix assemble(const PromptContext& context, const std::vector<double>& class_token,
                TokenPosition pos) {
    if (class_token.size() != context.word_dim())
        throw data_error("assemble: class token dimension " + std::to_string(class_token.size()) +
                         " does not match context dimension " + std::to_string(context.word_dim()));
    std::size_t length = context.length();
    std::size_t tok = token_row(length, pos);
    Matrix seq(length + 1, context.word_dim());
    std::size_t src = 0;
    for (std::size_t r = 0; r < seq.rows; ++r) {
        const double* from = (r == tok) ? class_token.data() : context.vectors.row(src++);
        double* to = seq.row(r);
        for (std::size_t c = 0; c < seq.cols; ++c) to[c] = from[c];
    }
    return seq;
}

Matrix assemble_bg(const BackgroundContext& bg) {
    if (bg.length() < 1) throw config_error("assemble_bg: empty background context");
    return bg.vectors;
}

PromptContext ensemble(const std::vector<PromptContext>& contexts) {
    if (contexts.empty()) throw config_error("ensemble: empty context list");
    std::size_t length = contexts.front().length();
    std::size_t dim = contexts.front().word_dim();
    for (const PromptContext& c : contexts)
        if (c.length() != length || c.word_dim() != dim)
            throw config_error("ensemble: contexts disagree in shape");

    PromptContext out;
    out.vectors = Matrix(length, dim);
    double count = static_cast<double>(contexts.size());
    for (std::size_t i = 0; i < out.vectors.data.size(); ++i) {
        long double sum = 0.0L;
        for (const PromptContext& c : contexts) sum += c.vectors.data[i];
        out.vectors.data[i] = static_cast<double>(sum / count);
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

void write_token_table(const std::string& path, const ClassTokenTable& table) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    os << "D_w " << table.word_dim() << '\n';
    for (int id : table.all_ids()) {
        os << id << ' ' << (table.split(id) == ClassSplit::base ? "base" : "novel");
        for (double v : table.token(id)) os << ' ' << format_double(v);
        os << '\n';
    }
    if (!os) throw data_error("write failed: " + path);
}

ClassTokenTable read_token_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open: " + path);
    std::string header_key;
    std::size_t dim = 0;
    if (!(is >> header_key >> dim) || header_key != "D_w" || dim < 1)
        throw data_error("token table: bad header in " + path);

    ClassTokenTable table(dim);
    std::string line;
    std::getline(is, line); // rest of header line
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int id;
        std::string split_name;
        if (!(ls >> id >> split_name))
            throw data_error("token table: malformed line " + std::to_string(line_no));
        ClassSplit split;
        if (split_name == "base") split = ClassSplit::base;
        else if (split_name == "novel") split = ClassSplit::novel;
        else throw data_error("token table: unknown split '" + split_name + "' on line " +
                              std::to_string(line_no));
        std::vector<double> token;
        token.reserve(dim);
        double v;
        while (ls >> v) token.push_back(v);
        if (token.size() != dim)
            throw data_error("token table: line " + std::to_string(line_no) + " has " +
                             std::to_string(token.size()) + " values, expected " +
                             std::to_string(dim));
        table.add(id, split, std::move(token));
    }
    return table;
}

} // namespace detpro::prompt
