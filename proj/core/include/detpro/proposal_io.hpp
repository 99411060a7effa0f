#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "detpro/geometry.hpp"

namespace detpro::geometry {

// Proposal datasets are line-delimited JSON, one record per line:
//   {"id":..,"image_id":..,"box":[x1,y1,x2,y2],"kind":..,"label":..|null,
//    "split":..,"embedding":[..]|null}
// Reals round-trip bit-exactly (shortest-representation doubles); unknown
// fields are rejected.
std::string record_to_json_line(const ProposalRecord& rec);
ProposalRecord record_from_json_line(const std::string& line);

void write_proposals(std::ostream& os, const std::vector<ProposalRecord>& records);
std::vector<ProposalRecord> read_proposals(std::istream& is);

void write_proposals_file(const std::string& path, const std::vector<ProposalRecord>& records);
std::vector<ProposalRecord> read_proposals_file(const std::string& path);

} // namespace detpro::geometry
