#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "conmt/decoder.hpp"
#include "conmt/embedspace.hpp"
#include "conmt/eval.hpp"
#include "conmt/toymodel.hpp"

namespace conmt {

/// Declarative description of a run. Serialized as flat "key = value" lines
/// with every key present, so the saved copy reproduces the run.
struct ExperimentConfig {
  // task
  TaskKind task = TaskKind::kLexicon;
  std::size_t vocab = 2000;
  double zipf = 1.2;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::size_t pairs = 12000;
  double heldout_fraction = 0.1;
  // tables
  std::size_t dim = 32;
  std::vector<std::string> tables{"uniform", "clumped", "combined"};
  double clump_fraction = 0.9;
  double clump_cos = 0.999;
  double alpha = 0.9;
  std::vector<double> alphas{0.5, 0.7, 0.9};
  // model and training
  std::size_t hidden = 0;
  LossKind loss = LossKind::kCosine;
  double learning_rate = 0.5;
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double clip = 1.0;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  // decoding and evaluation
  std::vector<std::size_t> beams{1, 2, 4, 8};
  LengthNorm length_norm = LengthNorm::kNone;
  ScoreSign score_sign = ScoreSign::kPlus;
  std::size_t max_extra = kDefaultMaxExtra;
  /// Empty means "split frequency mass into thirds".
  std::vector<std::uint64_t> buckets;
  std::filesystem::path out_dir = "runs";

  /// Throws InvalidArgument naming the offending key.
  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Applies one "key=value" override.
  void set(const std::string& key, const std::string& value);
  void write(std::ostream& out) const;
  void validate() const;
};

/// Dataset, split and training-set target frequencies for one seed.
struct ExperimentData {
  Dataset dataset;
  std::vector<Pair> train;
  std::vector<Pair> heldout;
  Vocab train_vocab;
  BucketSpec buckets;
};

ExperimentData make_experiment_data(const ExperimentConfig& config, std::uint64_t seed);

/// Builds a named table ("uniform", "hypercube", "clumped", "combined",
/// "combined@<alpha>") for the given seed. Clumped rows follow the training
/// frequency ranks in `data`; combined mixes clumped (pre) with uniform (rand).
EmbeddingTable make_table(const std::string& name, const ExperimentConfig& config,
                          const ExperimentData& data, std::uint64_t seed);

struct RunMetrics {
  std::string table;
  std::uint64_t seed = 0;
  double bleu = 0.0;
  double accuracy = 0.0;
  F1Report f1;
  double rare_f1() const { return f1.groups.front().f1(); }
  /// Highest-frequency bucket (the OOV bucket is last and skipped).
  double frequent_f1() const { return f1.groups[f1.groups.size() - 2].f1(); }
};

/// Trains a model on `table` and evaluates greedy held-out output.
RunMetrics run_single(const ExperimentConfig& config, const ExperimentData& data,
                      const std::string& table_name, const EmbeddingTable& table,
                      std::uint64_t seed);

struct FrequencyReport {
  std::vector<RunMetrics> runs;  // one per (table, seed)
  /// Seed means per table name.
  double mean_rare_f1(const std::string& table) const;
  double mean_frequent_f1(const std::string& table) const;
  double mean_bleu(const std::string& table) const;
  std::string to_tsv() const;
};

/// Trains one model per (table, seed) under identical configuration and
/// reports frequency-bucketed F1. Throws InvalidArgument if tables disagree
/// in shape.
FrequencyReport frequency_experiment(const ExperimentConfig& config);

struct AlphaRow {
  double alpha = 0.0;
  double bleu_like = 0.0;
  double rare_f1 = 0.0;
  double frequent_f1 = 0.0;
};

/// One combined-table run (seed-averaged) per alpha in config.alphas.
std::vector<AlphaRow> run_sweep(const ExperimentConfig& config);
std::string alpha_tsv(const std::vector<AlphaRow>& rows);

struct BeamRow {
  std::size_t beam = 0;
  double score = 0.0;            // corpus BLEU of beam output
  double delta_vs_greedy = 0.0;  // score - greedy BLEU
  double mean_log_likelihood = 0.0;
};

/// Decodes held-out data with every width in config.beams using `model`.
std::vector<BeamRow> run_beam_sweep(const ExperimentConfig& config,
                                    const ToySeq2Seq& model,
                                    const std::vector<Pair>& heldout);
/// Trains a model on the first table in config.tables with the first seed,
/// then sweeps beams.
std::vector<BeamRow> run_beam_sweep(const ExperimentConfig& config);
std::string beam_tsv(const std::vector<BeamRow>& rows);

}  // namespace conmt
