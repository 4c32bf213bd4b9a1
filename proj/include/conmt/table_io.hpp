#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "conmt/embedspace.hpp"

namespace conmt {

/// On-disk table formats.
///
/// text-vec: a header line "|V| d", then one line per token:
///   "token v1 ... vd".
/// binary: "CEMB", u32 version (=1), u32 |V|, u32 d, |V|*d little-endian f32
///   values row by row, then |V| tokens as u32 byte length + UTF-8 bytes.
enum class TableFormat { kTextVec, kBinary };

TableFormat parse_table_format(std::string_view name);

struct LoadedTable {
  EmbeddingTable table;
  /// Human-readable notes, e.g. rows that were renormalized.
  std::vector<std::string> warnings;
};

/// Rows whose norm is off by more than 1e-6 are projected back to the unit
/// sphere; a warning is recorded when the deviation exceeds 1e-3. Throws
/// ParseError on malformed input.
LoadedTable read_table(std::istream& in, TableFormat format);
LoadedTable load_table(const std::filesystem::path& path, TableFormat format);

void write_table(std::ostream& out, const EmbeddingTable& table, TableFormat format);
void save_table(const EmbeddingTable& table, const std::filesystem::path& path,
                TableFormat format);

/// Guess the format from the first four bytes of a file.
TableFormat sniff_table_format(const std::filesystem::path& path);

/// Frequency file: one "token<TAB>count" line per token (vocab order).
Vocab load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);

namespace le {

void put_u32(std::ostream& out, std::uint32_t v);
void put_f32(std::ostream& out, float v);
void put_f64(std::ostream& out, double v);
/// Readers throw ParseError carrying the byte offset on short reads.
std::uint32_t get_u32(std::istream& in, std::size_t& offset);
float get_f32(std::istream& in, std::size_t& offset);
double get_f64(std::istream& in, std::size_t& offset);

}  // namespace le

}  // namespace conmt
