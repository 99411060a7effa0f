#include "detpro/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "detpro/errors.hpp"
#include "detpro/sha256.hpp"

namespace detpro::prompt {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'R', 'O'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string_view raw(std::size_t n) {
        need(n);
        std::string_view v = bytes_.substr(pos_, n);
        pos_ += n;
        return v;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw data_error("checkpoint: truncated (need " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos_) + ")");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

void put_context(std::string& out, const PromptContext& ctx) {
    for (double v : ctx.vectors.data) put_f64(out, v);
}

PromptContext read_context(Reader& r, std::size_t length, std::size_t dim) {
    PromptContext ctx;
    ctx.vectors = Matrix(length, dim);
    for (double& v : ctx.vectors.data) v = r.f64();
    return ctx;
}

} // namespace

std::string save_checkpoint(const Checkpoint& ckpt) {
    const trainer::TrainConfig& cfg = ckpt.config;
    // Trained group count; at most the grading band count (empty bands are
    // skipped by train_all).
    std::size_t k = ckpt.group_contexts.size();
    if (k < 1) throw data_error("checkpoint: no group contexts");
    if (k > cfg.group_count())
        throw data_error("checkpoint: more group contexts than grading bands");
    bool has_bg = ckpt.has_bg();
    if (has_bg && ckpt.group_bg_contexts.size() != k)
        throw data_error("checkpoint: background context count mismatch");
    for (const PromptContext& c : ckpt.group_contexts)
        if (c.length() != cfg.context_length || c.word_dim() != cfg.word_dim)
            throw data_error("checkpoint: context shape does not match config");

    std::string config_text = trainer::canonical_config_text(cfg);
    auto digest = sha256(config_text);

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(cfg.context_length));
    put_u32(out, static_cast<std::uint32_t>(cfg.word_dim));
    put_u32(out, static_cast<std::uint32_t>(cfg.embed_dim));
    put_u32(out, static_cast<std::uint32_t>(k));
    put_u32(out, has_bg ? 1u : 0u);
    put_u32(out, static_cast<std::uint32_t>(config_text.size()));
    put_u64(out, cfg.seed_init);
    put_u64(out, cfg.seed_data);
    put_u64(out, cfg.seed_encoder);
    out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
    out.append(config_text);

    for (const PromptContext& c : ckpt.group_contexts) put_context(out, c);
    if (has_bg)
        for (const BackgroundContext& c : ckpt.group_bg_contexts) put_context(out, c);
    put_context(out, ckpt.ensembled);
    if (has_bg) {
        if (!ckpt.ensembled_bg) throw data_error("checkpoint: missing ensembled background context");
        put_context(out, *ckpt.ensembled_bg);
    }
    return out;
}

Checkpoint load_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    std::string_view magic = r.raw(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw data_error("checkpoint: bad magic bytes");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw data_error("checkpoint: unsupported version " + std::to_string(version));

    std::uint32_t length = r.u32();
    std::uint32_t word_dim = r.u32();
    std::uint32_t embed_dim = r.u32();
    std::uint32_t k = r.u32();
    std::uint32_t flags = r.u32();
    std::uint32_t config_len = r.u32();
    std::uint64_t seed_init = r.u64();
    std::uint64_t seed_data = r.u64();
    std::uint64_t seed_encoder = r.u64();
    std::string_view digest_bytes = r.raw(32);
    std::string config_text(r.raw(config_len));

    auto recomputed = sha256(config_text);
    if (std::memcmp(digest_bytes.data(), recomputed.data(), 32) != 0)
        throw data_error("checkpoint: config digest mismatch");

    Checkpoint ckpt;
    ckpt.config = trainer::parse_config_text(config_text);
    if (ckpt.config.context_length != length || ckpt.config.word_dim != word_dim ||
        ckpt.config.embed_dim != embed_dim || k < 1 || k > ckpt.config.group_count() ||
        ckpt.config.seed_init != seed_init || ckpt.config.seed_data != seed_data ||
        ckpt.config.seed_encoder != seed_encoder)
        throw data_error("checkpoint: header disagrees with embedded config");

    bool has_bg = (flags & 1u) != 0;
    for (std::uint32_t i = 0; i < k; ++i)
        ckpt.group_contexts.push_back(read_context(r, length, word_dim));
    if (has_bg)
        for (std::uint32_t i = 0; i < k; ++i)
            ckpt.group_bg_contexts.push_back(read_context(r, length, word_dim));
    ckpt.ensembled = read_context(r, length, word_dim);
    if (has_bg) ckpt.ensembled_bg = read_context(r, length, word_dim);

    if (!r.exhausted()) throw data_error("checkpoint: trailing bytes");
    return ckpt;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    std::string bytes = save_checkpoint(ckpt);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("write failed: " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

} // namespace detpro::prompt
