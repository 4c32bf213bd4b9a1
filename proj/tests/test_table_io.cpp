#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "conmt/embedspace.hpp"
#include "conmt/error.hpp"
#include "conmt/table_io.hpp"

using namespace conmt;

namespace {

LoadedTable round_trip(const EmbeddingTable& t, TableFormat f) {
  std::stringstream buf;
  write_table(buf, t, f);
  return read_table(buf, f);
}

LoadedTable parse_text(const std::string& s) {
  std::istringstream in(s);
  return read_table(in, TableFormat::kTextVec);
}

}  // namespace

TEST(TableIo, BinaryRoundTripIsBitwise) {
  auto t = gen_uniform(300, 24, 5);
  std::vector<std::string> names;
  for (int i = 0; i < 300; ++i) names.push_back("tok_" + std::to_string(i) + "\xc3\xa9");
  t.set_tokens(names);
  const auto back = round_trip(t, TableFormat::kBinary);
  EXPECT_TRUE(back.table.same_rows(t));
  EXPECT_EQ(back.table.tokens(), t.tokens());
  EXPECT_TRUE(back.warnings.empty());
  EXPECT_EQ(back.table.kind(), TableKind::kImported);
  EXPECT_FALSE(back.table.seed().has_value());
}

TEST(TableIo, BinaryLayout) {
  const EmbeddingTable t(2, {1.0f, 0.0f}, TableKind::kImported, std::nullopt, {"ab"});
  std::stringstream buf;
  write_table(buf, t, TableFormat::kBinary);
  const std::string s = buf.str();
  ASSERT_EQ(s.size(), 4u + 12u + 8u + 4u + 2u);
  EXPECT_EQ(s.substr(0, 4), "CEMB");
  EXPECT_EQ(s[4], 1);  // version, little-endian
  EXPECT_EQ(s[8], 1);  // rows
  EXPECT_EQ(s[12], 2);  // dim
  EXPECT_EQ(s.substr(s.size() - 2), "ab");
}

TEST(TableIo, TextRoundTripWithinTolerance) {
  const auto t = gen_uniform(100, 16, 9);
  const auto back = round_trip(t, TableFormat::kTextVec);
  ASSERT_EQ(back.table.rows(), t.rows());
  for (std::size_t i = 0; i < t.data().size(); ++i) {
    EXPECT_NEAR(back.table.data()[i], t.data()[i], 1e-6);
  }
  EXPECT_EQ(back.table.tokens(), t.tokens());
}

TEST(TableIo, TextRowWithNormTwoIsRenormalizedWithWarning) {
  const auto got = parse_text("2 2\na 2 0\nb 0 1\n");
  EXPECT_FLOAT_EQ(got.table.row(0)[0], 1.0f);
  EXPECT_FLOAT_EQ(got.table.row(0)[1], 0.0f);
  ASSERT_EQ(got.warnings.size(), 1u);
  EXPECT_NE(got.warnings[0].find("'a'"), std::string::npos);
  EXPECT_LE(got.table.max_norm_deviation(), 1e-6);
}

TEST(TableIo, TinyDeviationIsFixedSilently) {
  const auto got = parse_text("1 2\na 1.00001 0\n");
  EXPECT_TRUE(got.warnings.empty());
  EXPECT_LE(got.table.max_norm_deviation(), 1e-6);
}

TEST(TableIo, MissingRowsErrorAtEof) {
  try {
    parse_text("3 4\na 1 0 0 0\nb 0 1 0 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.where(), 4u);
    EXPECT_NE(std::string(e.what()).find("end of file"), std::string::npos);
  }
}

TEST(TableIo, TextParseErrors) {
  EXPECT_THROW(parse_text(""), ParseError);
  EXPECT_THROW(parse_text("x 2\n"), ParseError);
  EXPECT_THROW(parse_text("1 2 3\n"), ParseError);
  EXPECT_THROW(parse_text("1 2\na 1\n"), ParseError);
  EXPECT_THROW(parse_text("1 2\na 1 nan\n"), ParseError);
  EXPECT_THROW(parse_text("1 2\na inf 0\n"), ParseError);
  EXPECT_THROW(parse_text("1 2\na 0 0\n"), ParseError);
  try {
    parse_text("2 2\na 1 0\na 0 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.where(), 3u);
  }
}

TEST(TableIo, BinaryParseErrors) {
  auto t = gen_uniform(3, 4, 1);
  std::stringstream buf;
  write_table(buf, t, TableFormat::kBinary);
  const std::string good = buf.str();

  std::istringstream bad_magic("XEMB" + good.substr(4));
  EXPECT_THROW(read_table(bad_magic, TableFormat::kBinary), ParseError);

  std::istringstream truncated(good.substr(0, 30));
  try {
    read_table(truncated, TableFormat::kBinary);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.where(), 28u);
  }

  std::string nan_row = good;
  const float nan = std::nanf("");
  std::memcpy(nan_row.data() + 16, &nan, 4);
  std::istringstream with_nan(nan_row);
  EXPECT_THROW(read_table(with_nan, TableFormat::kBinary), ParseError);
}

TEST(TableIo, FilesAndSniffing) {
  const auto dir = std::filesystem::temp_directory_path() / "conmt_table_io";
  std::filesystem::create_directories(dir);
  const auto t = gen_hypercube(64, 8, 3).table;
  save_table(t, dir / "t.cemb", TableFormat::kBinary);
  save_table(t, dir / "t.vec", TableFormat::kTextVec);
  EXPECT_EQ(sniff_table_format(dir / "t.cemb"), TableFormat::kBinary);
  EXPECT_EQ(sniff_table_format(dir / "t.vec"), TableFormat::kTextVec);
  EXPECT_TRUE(load_table(dir / "t.cemb", TableFormat::kBinary).table.same_rows(t));
  EXPECT_TRUE(load_table(dir / "t.vec", TableFormat::kTextVec).table.same_rows(t));
  EXPECT_THROW(load_table(dir / "missing", TableFormat::kBinary), InvalidArgument);
}

TEST(TableIo, VocabRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "conmt_table_io";
  std::filesystem::create_directories(dir);
  const Vocab v({"</s>", "a", "b"}, {10, 3, 7});
  save_vocab(v, dir / "freq.tsv");
  const auto back = load_vocab(dir / "freq.tsv");
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(back.freq(2), 7u);
  EXPECT_EQ(back.at_rank(1), 2u);
}

TEST(TableIo, FormatNames) {
  EXPECT_EQ(parse_table_format("binary"), TableFormat::kBinary);
  EXPECT_EQ(parse_table_format("text-vec"), TableFormat::kTextVec);
  EXPECT_THROW(parse_table_format("hdf5"), InvalidArgument);
}
