#include "conmt/table_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "conmt/error.hpp"

namespace conmt {

namespace {

constexpr char kMagic[4] = {'C', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

constexpr double kRenormTolerance = 1e-6;
constexpr double kWarnTolerance = 1e-3;

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = (out << 8) | (v & 0xFF);
      v >>= 8;
    }
    return out;
  } else {
    return v;
  }
}

template <typename U>
void put_raw(std::ostream& out, U v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get_raw(std::istream& in, std::size_t& offset, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U))) {
    throw ParseError(std::string("unexpected end of file reading ") + what +
                         " at byte " + std::to_string(offset),
                     offset);
  }
  offset += sizeof(U);
  return to_le(v);
}

// Projects off-norm rows to the unit sphere, collecting warnings.
std::vector<std::string> renormalize(std::vector<float>& data, std::size_t dim,
                                     const std::vector<std::string>& tokens,
                                     std::size_t first_line) {
  std::vector<std::string> warnings;
  const std::size_t n = data.size() / dim;
  for (std::size_t r = 0; r < n; ++r) {
    float* row = data.data() + r * dim;
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += static_cast<double>(row[i]) * row[i];
    const double norm = std::sqrt(s);
    if (norm == 0.0) {
      throw ParseError("row " + std::to_string(r) + " ('" + tokens[r] +
                           "') is the zero vector",
                       first_line + r);
    }
    if (std::abs(norm - 1.0) <= kRenormTolerance) continue;
    if (std::abs(norm - 1.0) > kWarnTolerance) {
      std::ostringstream msg;
      msg << "row " << r << " ('" << tokens[r] << "') had norm " << norm
          << "; renormalized";
      warnings.push_back(msg.str());
    }
    for (std::size_t i = 0; i < dim; ++i) {
      row[i] = static_cast<float>(static_cast<double>(row[i]) / norm);
    }
  }
  return warnings;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

LoadedTable read_text(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty file: missing header", 1);
  auto header = split_ws(line);
  std::size_t n = 0, dim = 0;
  if (header.size() != 2 || !parse_number(header[0], n) ||
      !parse_number(header[1], dim)) {
    throw ParseError("line 1: malformed header, expected \"<rows> <dim>\"", 1);
  }
  if (n == 0 || dim < 2) {
    throw ParseError("line 1: header needs rows >= 1 and dim >= 2", 1);
  }
  std::vector<float> data(n * dim);
  std::vector<std::string> tokens;
  tokens.reserve(n);
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < n; ++r) {
    ++line_no;
    if (!std::getline(in, line)) {
      throw ParseError("line " + std::to_string(line_no) +
                           ": unexpected end of file, header promised " +
                           std::to_string(n) + " rows but found " +
                           std::to_string(r),
                       line_no);
    }
    auto fields = split_ws(line);
    if (fields.size() != dim + 1) {
      throw ParseError("line " + std::to_string(line_no) + ": expected token and " +
                           std::to_string(dim) + " values, found " +
                           std::to_string(fields.size()) + " fields",
                       line_no);
    }
    std::string token(fields[0]);
    if (!seen.insert(token).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate token '" +
                           token + "'",
                       line_no);
    }
    tokens.push_back(std::move(token));
    for (std::size_t i = 0; i < dim; ++i) {
      float v;
      if (!parse_number(fields[i + 1], v) || !std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line_no) + ": bad coordinate '" +
                             std::string(fields[i + 1]) + "'",
                         line_no);
      }
      data[r * dim + i] = v;
    }
  }
  auto warnings = renormalize(data, dim, tokens, 2);
  return {EmbeddingTable(dim, std::move(data), TableKind::kImported, std::nullopt,
                         std::move(tokens)),
          std::move(warnings)};
}

LoadedTable read_binary(std::istream& in) {
  std::size_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("byte 0: missing CEMB magic", 0);
  }
  offset = 4;
  const auto version = le::get_u32(in, offset);
  if (version != kVersion) {
    throw ParseError("byte 4: unsupported CEMB version " + std::to_string(version), 4);
  }
  const std::size_t n = le::get_u32(in, offset);
  const std::size_t dim = le::get_u32(in, offset);
  if (n == 0 || dim < 2) {
    throw ParseError("byte 8: header needs rows >= 1 and dim >= 2", 8);
  }
  std::vector<float> data(n * dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t at = offset;
    data[i] = le::get_f32(in, offset);
    if (!std::isfinite(data[i])) {
      throw ParseError("byte " + std::to_string(at) + ": non-finite coordinate", at);
    }
  }
  std::vector<std::string> tokens;
  tokens.reserve(n);
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t at = offset;
    const std::uint32_t len = le::get_u32(in, offset);
    std::string token(len, '\0');
    in.read(token.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) {
      throw ParseError("byte " + std::to_string(offset) +
                           ": unexpected end of file in token " + std::to_string(r),
                       offset);
    }
    offset += len;
    if (!seen.insert(token).second) {
      throw ParseError("byte " + std::to_string(at) + ": duplicate token '" +
                           token + "'",
                       at);
    }
    tokens.push_back(std::move(token));
  }
  auto warnings = renormalize(data, dim, tokens, 0);
  return {EmbeddingTable(dim, std::move(data), TableKind::kImported, std::nullopt,
                         std::move(tokens)),
          std::move(warnings)};
}

}  // namespace

TableFormat parse_table_format(std::string_view name) {
  if (name == "text-vec" || name == "text") return TableFormat::kTextVec;
  if (name == "binary") return TableFormat::kBinary;
  throw InvalidArgument("unknown table format '" + std::string(name) + "'");
}

namespace le {

void put_u32(std::ostream& out, std::uint32_t v) { put_raw(out, v); }
void put_f32(std::ostream& out, float v) { put_raw(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::ostream& out, double v) { put_raw(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& in, std::size_t& offset) {
  return get_raw<std::uint32_t>(in, offset, "u32");
}
float get_f32(std::istream& in, std::size_t& offset) {
  return std::bit_cast<float>(get_raw<std::uint32_t>(in, offset, "f32"));
}
double get_f64(std::istream& in, std::size_t& offset) {
  return std::bit_cast<double>(get_raw<std::uint64_t>(in, offset, "f64"));
}

}  // namespace le

LoadedTable read_table(std::istream& in, TableFormat format) {
  return format == TableFormat::kBinary ? read_binary(in) : read_text(in);
}

LoadedTable load_table(const std::filesystem::path& path, TableFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open table file " + path.string());
  return read_table(in, format);
}

void write_table(std::ostream& out, const EmbeddingTable& table, TableFormat format) {
  const std::size_t n = table.rows();
  const std::size_t dim = table.dim();
  if (format == TableFormat::kBinary) {
    out.write(kMagic, 4);
    le::put_u32(out, kVersion);
    le::put_u32(out, static_cast<std::uint32_t>(n));
    le::put_u32(out, static_cast<std::uint32_t>(dim));
    for (float v : table.data()) le::put_f32(out, v);
    for (const auto& tok : table.tokens()) {
      le::put_u32(out, static_cast<std::uint32_t>(tok.size()));
      out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
    }
    return;
  }
  out << n << ' ' << dim << '\n';
  char buf[32];
  for (std::size_t r = 0; r < n; ++r) {
    out << table.tokens()[r];
    for (float v : table.row(r)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path,
                TableFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write table file " + path.string());
  write_table(out, table, format);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TableFormat sniff_table_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return (in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0)
             ? TableFormat::kBinary
             : TableFormat::kTextVec;
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open frequency file " + path.string());
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> freq;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_ws(line);
    std::uint64_t count = 0;
    if (fields.size() != 2 || !parse_number(fields[1], count)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                           ": expected \"token<TAB>count\"",
                       line_no);
    }
    tokens.emplace_back(fields[0]);
    freq.push_back(count);
  }
  return Vocab(std::move(tokens), std::move(freq));
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write frequency file " + path.string());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.token(static_cast<TokenId>(i)) << '\t'
        << vocab.freq(static_cast<TokenId>(i)) << '\n';
  }
}

}  // namespace conmt
