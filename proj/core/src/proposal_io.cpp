#include "detpro/proposal_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "detpro/errors.hpp"

namespace detpro::geometry {

using nlohmann::json;

namespace {

const char* kind_name(RecordKind k) {
    return k == RecordKind::ground_truth ? "ground_truth" : "region_proposal";
}

RecordKind kind_from(const std::string& s, const std::string& id) {
    if (s == "ground_truth") return RecordKind::ground_truth;
    if (s == "region_proposal") return RecordKind::region_proposal;
    throw data_error("record " + id + ": unknown kind '" + s + "'");
}

const char* split_name(ClassSplit s) {
    return s == ClassSplit::base ? "base" : "novel";
}

ClassSplit split_from(const std::string& s, const std::string& id) {
    if (s == "base") return ClassSplit::base;
    if (s == "novel") return ClassSplit::novel;
    throw data_error("record " + id + ": unknown split '" + s + "'");
}

} // namespace

std::string record_to_json_line(const ProposalRecord& rec) {
    json j;
    j["id"] = rec.id;
    j["image_id"] = rec.image_id;
    j["box"] = {rec.box.x1, rec.box.y1, rec.box.x2, rec.box.y2};
    j["kind"] = kind_name(rec.kind);
    if (rec.label) j["label"] = *rec.label; else j["label"] = nullptr;
    j["split"] = split_name(rec.split);
    if (rec.embedding) j["embedding"] = *rec.embedding; else j["embedding"] = nullptr;
    return j.dump();
}

ProposalRecord record_from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw data_error(std::string("proposal record: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw data_error("proposal record: not a JSON object");

    static const char* known[] = {"id", "image_id", "box", "kind", "label", "split", "embedding"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw data_error("proposal record: unknown field '" + it.key() + "'");
    }
    for (const char* k : known) {
        if (!j.contains(k)) throw data_error(std::string("proposal record: missing field '") + k + "'");
    }

    ProposalRecord rec;
    try {
        rec.id = j.at("id").get<std::string>();
        rec.image_id = j.at("image_id").get<std::string>();
        const json& b = j.at("box");
        if (!b.is_array() || b.size() != 4)
            throw data_error("record " + rec.id + ": box must be an array of 4 reals");
        rec.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        rec.kind = kind_from(j.at("kind").get<std::string>(), rec.id);
        if (!j.at("label").is_null()) rec.label = j.at("label").get<int>();
        rec.split = split_from(j.at("split").get<std::string>(), rec.id);
        if (!j.at("embedding").is_null())
            rec.embedding = j.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw data_error("record " + rec.id + ": " + e.what());
    }
    if (rec.kind == RecordKind::ground_truth && !rec.label)
        throw data_error("record " + rec.id + ": ground truth requires a label");
    if (!rec.box.valid())
        throw data_error("record " + rec.id + ": invalid box");
    return rec;
}

void write_proposals(std::ostream& os, const std::vector<ProposalRecord>& records) {
    for (const ProposalRecord& rec : records) os << record_to_json_line(rec) << '\n';
}

std::vector<ProposalRecord> read_proposals(std::istream& is) {
    std::vector<ProposalRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json_line(line));
        } catch (const data_error& e) {
            throw data_error("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_proposals_file(const std::string& path, const std::vector<ProposalRecord>& records) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    write_proposals(os, records);
    if (!os) throw data_error("write failed: " + path);
}

std::vector<ProposalRecord> read_proposals_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open: " + path);
    return read_proposals(is);
}

} // namespace detpro::geometry
