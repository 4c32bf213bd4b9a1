// conmt: command-line driver for table generation, profiling, training,
// decoding, evaluation and sweeps.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conmt/decoder.hpp"
#include "conmt/embedspace.hpp"
#include "conmt/error.hpp"
#include "conmt/eval.hpp"
#include "conmt/experiment.hpp"
#include "conmt/geometry.hpp"
#include "conmt/rng.hpp"
#include "conmt/table_io.hpp"
#include "conmt/toymodel.hpp"

namespace fs = std::filesystem;
using namespace conmt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct StageFailure : std::runtime_error {
  StageFailure(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what) {}
};

template <typename F>
auto stage(const std::string& name, F&& body) {
  try {
    return body();
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& s, const std::string& what) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw InvalidArgument(what + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<std::string>> read_token_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string t;
    while (ls >> t) toks.push_back(t);
    out.push_back(std::move(toks));
  }
  return out;
}

void write_sentences(const fs::path& path, const std::vector<Sentence>& sents,
                     const std::vector<std::string>& names) {
  auto out = open_out(path);
  for (const auto& s : sents) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << names.at(s[i]);
    out << '\n';
  }
}

// Maps token strings to ids; strings missing from the vocabulary get ids past
// its end so they stay distinct (and land in the OOV bucket).
class TokenMapper {
 public:
  explicit TokenMapper(const Vocab* vocab) : vocab_(vocab) {}
  TokenId operator()(const std::string& tok) {
    if (vocab_) {
      if (auto id = vocab_->find(tok)) return *id;
    }
    auto [it, added] = extra_.try_emplace(tok, base() + extra_.size());
    return it->second;
  }
  std::vector<Sentence> map(const std::vector<std::vector<std::string>>& lines) {
    std::vector<Sentence> out;
    for (const auto& l : lines) {
      Sentence s;
      for (const auto& t : l) s.push_back((*this)(t));
      out.push_back(std::move(s));
    }
    return out;
  }

 private:
  TokenId base() const { return vocab_ ? static_cast<TokenId>(vocab_->size()) : 0; }
  const Vocab* vocab_;
  std::unordered_map<std::string, TokenId> extra_;
};

TableFormat format_for(const fs::path& path, const std::string& flag) {
  if (!flag.empty()) return parse_table_format(flag);
  return path.extension() == ".cemb" ? TableFormat::kBinary : TableFormat::kTextVec;
}

EmbeddingTable load_with_warnings(const fs::path& path) {
  auto loaded = load_table(path, sniff_table_format(path));
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << path.string() << ": " << w << '\n';
  return std::move(loaded.table);
}

// ---------------------------------------------------------------------------
// gen-emb

struct GenEmbArgs {
  std::string kind;
  std::size_t dim = kDefaultDim;
  std::optional<std::uint64_t> seed;
  std::size_t vocab_size = 0;
  std::string freq;
  double alpha = 0.9;
  double clump_fraction = 0.5;
  double clump_cos = 0.999;
  std::string pre, rand;
  std::string out;
  std::string format;
};

void run_gen_emb(const GenEmbArgs& a) {
  const TableKind kind = parse_table_kind(a.kind);
  std::optional<Vocab> vocab;
  if (!a.freq.empty()) vocab = stage("load-freq", [&] { return load_vocab(a.freq); });
  const std::size_t n = vocab ? vocab->size() : a.vocab_size;
  const bool has_inputs = !a.pre.empty() || !a.rand.empty();
  if (kind == TableKind::kCombined && has_inputs) {
    if (a.pre.empty() || a.rand.empty()) {
      throw InvalidArgument("combined from files needs both --pre and --rand");
    }
  } else {
    if (!a.seed) throw InvalidArgument("--seed is required for generated tables");
    if (n == 0) throw InvalidArgument("give --vocab-size or --freq");
  }
  if (kind == TableKind::kImported) throw InvalidArgument("cannot generate an imported table");

  EmbeddingTable table = stage("gen-emb", [&] {
    switch (kind) {
      case TableKind::kUniform:
        return gen_uniform(n, a.dim, *a.seed);
      case TableKind::kHypercube:
        return gen_hypercube(n, a.dim, *a.seed).table;
      case TableKind::kClumped:
        return gen_clumped(n, a.dim, *a.seed, a.clump_fraction, a.clump_cos,
                           vocab ? &*vocab : nullptr);
      default: {
        if (has_inputs) return combine(load_with_warnings(a.pre), load_with_warnings(a.rand), a.alpha);
        const auto pre = gen_clumped(n, a.dim, splitmix64(*a.seed ^ 0x22), a.clump_fraction,
                                     a.clump_cos, vocab ? &*vocab : nullptr);
        return combine(pre, gen_uniform(n, a.dim, splitmix64(*a.seed ^ 0x11)), a.alpha);
      }
    }
  });
  if (vocab) table.set_tokens(vocab->tokens());
  stage("write-table", [&] { save_table(table, a.out, format_for(a.out, a.format)); });
  std::cout << "wrote " << table.rows() << "x" << table.dim() << " " << to_string(table.kind())
            << " table to " << a.out << '\n';
}

// ---------------------------------------------------------------------------
// profile

struct ProfileArgs {
  std::string table;
  std::string freq;
  std::size_t k = 5;
  std::size_t bin = kDefaultBinSize;
  std::string out;
  double eps = 1e-4;
};

void run_profile(const ProfileArgs& a) {
  if (a.k == 0) throw InvalidArgument("--k must be >= 1");
  if (a.bin == 0) throw InvalidArgument("--bin must be >= 1");
  const auto table = stage("load-table", [&] { return load_with_warnings(a.table); });
  const Vocab vocab = a.freq.empty() ? Vocab::identity(table.rows())
                                     : stage("load-freq", [&] { return load_vocab(a.freq); });
  if (vocab.size() != table.rows()) {
    throw InvalidArgument("frequency file has " + std::to_string(vocab.size()) +
                          " tokens but the table has " + std::to_string(table.rows()));
  }
  const auto profile = stage("knn", [&] { return knn_profile(table, a.k); });
  const auto ranks = stage("ranks", [&] { return neighbor_rank_profile(profile, vocab); });
  const std::size_t n = table.rows();
  const std::size_t k5 = std::min<std::size_t>(5, a.k) - 1;

  std::vector<std::uint32_t> rank(n);
  std::vector<double> nn_sim(n), nn5_sim(n), nn_rank(n), nn5_rank(n);
  for (std::size_t t = 0; t < n; ++t) {
    rank[t] = vocab.rank_of(static_cast<TokenId>(t));
    nn_sim[t] = profile.sims(t)[0];
    nn5_sim[t] = profile.sims(t)[k5];
    nn_rank[t] = ranks.nn_rank[t];
    nn5_rank[t] = ranks.nn5_rank[t];
  }
  stage("write-profile", [&] {
    auto out = open_out(a.out + ".tokens.tsv");
    out << "token\trank\tnn_sim\tnn5_sim\tnn_rank\tnn5_rank\n";
    out.precision(7);
    for (std::uint32_t r = 0; r < n; ++r) {
      const TokenId t = vocab.at_rank(r);
      out << vocab.token(t) << '\t' << r << '\t' << nn_sim[t] << '\t' << nn5_sim[t] << '\t'
          << ranks.nn_rank[t] << '\t' << ranks.nn5_rank[t] << '\n';
    }
    auto bout = open_out(a.out + ".binned.tsv");
    bout << "series\tbin_lo\tbin_hi\tcount\tmean\tp25\tmedian\tp75\n";
    bout.precision(7);
    const std::pair<const char*, const std::vector<double>*> series[] = {
        {"nn_sim", &nn_sim}, {"nn5_sim", &nn5_sim}, {"nn_rank", &nn_rank}, {"nn5_rank", &nn5_rank}};
    for (const auto& [name, ys] : series) {
      const auto b = binned_stats(rank, *ys, a.bin);
      for (std::size_t i = 0; i < b.bins(); ++i) {
        bout << name << '\t' << b.lower[i] << '\t' << b.upper[i] << '\t' << b.count[i] << '\t'
             << b.mean[i] << '\t' << b.p25[i] << '\t' << b.median[i] << '\t' << b.p75[i] << '\n';
      }
    }
  });
  const auto dups = stage("near-duplicates", [&] { return near_duplicates(table, a.eps); });
  double mean_nn = 0.0;
  for (double s : nn_sim) mean_nn += s;
  mean_nn /= static_cast<double>(n);
  std::cout << "mean_nn_sim\t" << mean_nn << "\nnear_duplicate_pairs\t" << dups.size()
            << "\nks_nn_rank\t" << ks_uniform_statistic(ranks.nn_rank, n) << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string task = "lexicon";
  double zipf = 1.2;
  std::size_t vocab = 2000;
  std::size_t pairs = 10000;
  std::size_t min_len = 3, max_len = 8;
  double heldout = 0.1;
  std::string table;
  std::string kind = "uniform";
  std::size_t dim = 32;
  std::size_t hidden = 0;
  std::string loss = "cosine";
  std::size_t epochs = 20;
  std::size_t batch = 32;
  double lr = 0.5;
  double clip = 1.0;
  bool trainable = false;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

void run_train(const TrainArgs& a) {
  if (!a.seed) throw InvalidArgument("--seed is required");
  const std::uint64_t seed = *a.seed;
  ToyTask task;
  task.kind = parse_task_kind(a.task);
  task.src_vocab = task.tgt_vocab = a.vocab;
  task.zipf = a.zipf;
  task.min_len = a.min_len;
  task.max_len = a.max_len;
  task.pairs = a.pairs;
  task.seed = seed;
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.loss = parse_loss_kind(a.loss);
  tc.targets_trainable = a.trainable;
  tc.seed = seed;
  tc.clip = a.clip;
  if (a.batch == 0) throw InvalidArgument("--batch must be >= 1");

  const fs::path dir(a.out);
  const auto data = stage("gen-task", [&] { return gen_task(task); });
  const auto split = stage("split", [&] { return split_heldout(data.pairs, a.heldout, seed); });
  const auto& train_pairs = split.first;
  const auto& held = split.second;
  const auto freq = count_target_frequencies(train_pairs, data.tgt_vocab);

  auto table = stage("targets", [&] {
    EmbeddingTable t;
    if (!a.table.empty()) {
      t = load_with_warnings(a.table);
    } else {
      switch (parse_table_kind(a.kind)) {
        case TableKind::kUniform: t = gen_uniform(a.vocab, a.dim, seed); break;
        case TableKind::kHypercube: t = gen_hypercube(a.vocab, a.dim, seed).table; break;
        case TableKind::kClumped: t = gen_clumped(a.vocab, a.dim, seed, 0.5, 0.999, &freq); break;
        default: throw InvalidArgument("--kind must be uniform, hypercube or clumped; use --table otherwise");
      }
    }
    if (t.rows() != a.vocab) {
      throw InvalidArgument("target table has " + std::to_string(t.rows()) +
                            " rows, task vocabulary has " + std::to_string(a.vocab));
    }
    t.set_tokens(data.tgt_vocab.tokens());
    return std::make_shared<const EmbeddingTable>(std::move(t));
  });

  ModelConfig mc;
  mc.src_vocab = a.vocab;
  mc.hidden = a.hidden;
  mc.max_positions = a.max_len + 2;
  mc.seed = seed;
  ToySeq2Seq model = stage("init-model", [&] { return ToySeq2Seq(mc, table); });

  fs::create_directories(dir);
  {
    auto cfg = open_out(dir / "config.txt");
    cfg << "task = " << a.task << "\nzipf = " << a.zipf << "\nvocab = " << a.vocab
        << "\npairs = " << a.pairs << "\nmin_len = " << a.min_len << "\nmax_len = " << a.max_len
        << "\nheldout_fraction = " << a.heldout << "\ntable = " << (a.table.empty() ? a.kind : a.table)
        << "\ndim = " << table->dim() << "\nhidden = " << model.hidden() << "\nloss = " << a.loss
        << "\nepochs = " << a.epochs << "\nbatch_size = " << a.batch << "\nlearning_rate = " << a.lr
        << "\nclip = " << a.clip << "\ntargets_trainable = " << (a.trainable ? "true" : "false")
        << "\nseed = " << seed << "\nparameters = " << model.parameter_count() << '\n';
  }
  auto metrics = open_out(dir / "metrics.jsonl");
  const auto result = stage("train", [&] {
    return train(model, train_pairs, held, tc, [&](const EpochMetrics& m) {
      metrics << to_json_line(m) << '\n';
      metrics.flush();
      std::cerr << "epoch " << m.epoch << " loss " << m.loss << " acc " << m.heldout_accuracy << '\n';
    });
  });
  if (result.diverged) throw StageFailure("train", result.report);

  stage("checkpoint", [&] {
    {
      auto out = open_out(dir / "model.ctoy");
      model.save(out);
    }
    save_table(model.export_targets(), dir / "targets.cemb", TableFormat::kBinary);
    save_vocab(freq, dir / "freq.tsv");
    save_vocab(data.src_vocab, dir / "src_vocab.tsv");
    std::vector<Sentence> src, ref;
    for (const auto& p : held) {
      src.push_back(p.src);
      ref.push_back(p.tgt);
    }
    write_sentences(dir / "heldout.src", src, data.src_vocab.tokens());
    write_sentences(dir / "heldout.ref", ref, data.tgt_vocab.tokens());
  });
  std::cout << "wrote " << dir.string() << '\n';
}

// ---------------------------------------------------------------------------
// decode

struct DecodeArgs {
  std::string table, model, src_vocab, input, out, hyps;
  std::size_t beam = 1;
  std::size_t nbest = 1;
  std::size_t max_extra = kDefaultMaxExtra;
  std::string length_norm = "none";
  std::string score_sign = "plus";
  double kappa = 1.0;
};

void run_decode(const DecodeArgs& a) {
  DecodeOptions opts;
  opts.eos = kEos;
  opts.max_extra = a.max_extra;
  opts.kappa = Kappa(a.kappa);
  opts.sign = parse_score_sign(a.score_sign);
  opts.length_norm = parse_length_norm(a.length_norm);
  opts.nbest = a.nbest;
  if (a.beam == 0) throw InvalidArgument("--beam must be >= 1");
  if (a.nbest == 0 || a.nbest > a.beam) throw InvalidArgument("--nbest must lie in [1, beam]");

  const fs::path model_path(a.model);
  const fs::path table_path = a.table.empty() ? model_path.parent_path() / "targets.cemb" : fs::path(a.table);
  const fs::path vocab_path =
      a.src_vocab.empty() ? model_path.parent_path() / "src_vocab.tsv" : fs::path(a.src_vocab);
  auto table = stage("load-table", [&] {
    return std::make_shared<const EmbeddingTable>(load_with_warnings(table_path));
  });
  const auto model = stage("load-model", [&] {
    std::ifstream in(model_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + model_path.string());
    return ToySeq2Seq::load(in, table);
  });
  const auto src_vocab = stage("load-src-vocab", [&] { return load_vocab(vocab_path); });
  const auto lines = stage("read-input", [&] { return read_token_lines(a.input); });

  std::vector<Sentence> sources;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    Sentence s;
    for (const auto& t : lines[i]) {
      const auto id = src_vocab.find(t);
      if (!id || *id == kEos) {
        throw StageFailure("read-input", "line " + std::to_string(i + 1) + ": unknown source token '" + t + "'");
      }
      s.push_back(*id);
    }
    sources.push_back(std::move(s));
  }

  const NNIndex index(table);
  auto step = model.step_function();
  const auto& names = table->tokens();
  stage("decode", [&] {
    auto out = open_out(a.out);
    out << "sent\trank\tscore\ttokens\n";
    out.precision(10);
    std::optional<std::ofstream> best;
    if (!a.hyps.empty()) best = open_out(a.hyps);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto hs = beam_decode(step, index, sources[i], a.beam, opts);
      for (std::size_t r = 0; r < hs.size(); ++r) {
        out << i << '\t' << r + 1 << '\t' << hs[r].normalized(opts.length_norm) << '\t';
        for (std::size_t j = 0; j < hs[r].tokens.size(); ++j) {
          out << (j ? " " : "") << names.at(hs[r].tokens[j]);
        }
        out << '\n';
      }
      if (best) {
        const auto& t = hs.front().tokens;
        for (std::size_t j = 0; j < t.size(); ++j) *best << (j ? " " : "") << names.at(t[j]);
        *best << '\n';
      }
    }
  });
  std::cout << "decoded " << sources.size() << " sentences\n";
}

// ---------------------------------------------------------------------------
// eval

// EOS never appears in output files, so its count is left out of the split.
BucketSpec mass_buckets(const Vocab& vocab) {
  const auto eos = vocab.find("</s>");
  if (!eos) return BucketSpec::from_frequency_mass(vocab);
  std::vector<std::uint64_t> freq(vocab.freqs().begin(), vocab.freqs().end());
  freq[*eos] = 0;
  return BucketSpec::from_frequency_mass(Vocab(vocab.tokens(), std::move(freq)));
}

struct EvalArgs {
  std::string metric;
  std::string hyps, refs, freq, buckets, out;
};

void run_eval(const EvalArgs& a) {
  if (a.metric != "bleu" && a.metric != "f1") throw InvalidArgument("metric must be bleu or f1");
  if (a.metric == "f1" && a.freq.empty()) throw InvalidArgument("f1 needs --freq");
  std::vector<std::uint64_t> bounds;
  if (!a.buckets.empty()) bounds = parse_u64_list(a.buckets, "--buckets");
  std::optional<Vocab> vocab;
  if (!a.freq.empty()) vocab = stage("load-freq", [&] { return load_vocab(a.freq); });
  const auto h_lines = stage("read-hyps", [&] { return read_token_lines(a.hyps); });
  const auto r_lines = stage("read-refs", [&] { return read_token_lines(a.refs); });
  TokenMapper mapper(vocab ? &*vocab : nullptr);
  const auto hyps = mapper.map(h_lines);
  const auto refs = mapper.map(r_lines);

  nlohmann::json report;
  std::ostringstream tsv;
  tsv.precision(6);
  tsv << std::fixed;
  if (a.metric == "bleu") {
    const double bleu = stage("bleu", [&] { return corpus_bleu(hyps, refs); });
    report = {{"metric", "bleu"}, {"bleu", bleu}, {"sentences", hyps.size()}};
    tsv << "metric\tvalue\nbleu\t" << bleu << '\n';
  } else {
    const BucketSpec spec = bounds.empty() ? mass_buckets(*vocab) : BucketSpec(bounds);
    const auto rep = stage("f1", [&] { return token_f1_by_bucket(hyps, refs, *vocab, spec); });
    tsv << to_tsv(rep);
    report["metric"] = "f1";
    report["boundaries"] = spec.boundaries();
    for (std::size_t g = 0; g < rep.groups.size(); ++g) {
      const auto& m = rep.groups[g];
      report["buckets"].push_back({{"bucket", rep.labels[g]}, {"tp", m.tp}, {"fp", m.fp},
                                   {"fn", m.fn}, {"gold", m.gold}, {"precision", m.precision()},
                                   {"recall", m.recall()}, {"f1", m.f1()}});
    }
    report["micro_f1"] = rep.micro().f1();
  }
  if (a.out.empty()) {
    std::cout << tsv.str();
  } else {
    stage("write-report", [&] {
      write_text(a.out + ".tsv", tsv.str());
      write_text(a.out + ".json", report.dump() + "\n");
    });
  }
}

// ---------------------------------------------------------------------------
// sweeps

struct SweepArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string seeds;
  std::string out;
};

ExperimentConfig resolve_config(const SweepArgs& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(a.config);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seeds.empty()) throw InvalidArgument("--seed is required");
  c.seeds = parse_u64_list(a.seeds, "--seed");
  if (!a.out.empty()) c.out_dir = a.out;
  c.validate();
  return c;
}

void save_config(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  auto out = open_out(c.out_dir / "config.txt");
  c.write(out);
}

void run_sweep_alpha(const SweepArgs& a) {
  const auto c = resolve_config(a);
  if (c.alphas.empty()) throw InvalidArgument("alphas must not be empty");
  save_config(c);
  const auto rows = stage("sweep-alpha", [&] { return run_sweep(c); });
  stage("write-report", [&] { write_text(c.out_dir / "alpha.tsv", alpha_tsv(rows)); });
  std::cout << alpha_tsv(rows);
}

void run_sweep_beam(const SweepArgs& a) {
  const auto c = resolve_config(a);
  if (c.beams.empty()) throw InvalidArgument("beams must not be empty");
  save_config(c);
  const auto rows = stage("sweep-beam", [&] { return run_beam_sweep(c); });
  stage("write-report", [&] { write_text(c.out_dir / "beam.tsv", beam_tsv(rows)); });
  std::cout << beam_tsv(rows);
}

void run_frequency(const SweepArgs& a) {
  const auto c = resolve_config(a);
  save_config(c);
  const auto rep = stage("frequency", [&] { return frequency_experiment(c); });
  stage("write-report", [&] { write_text(c.out_dir / "frequency.tsv", rep.to_tsv()); });
  std::cout << rep.to_tsv();
}

void add_sweep_options(CLI::App* cmd, SweepArgs& a) {
  cmd->add_option("--config", a.config, "Experiment config file (key = value lines)");
  cmd->add_option("--set", a.sets, "Override one config key (key=value); repeatable");
  cmd->add_option("--seed", a.seeds, "Seed or comma-separated seeds")->required();
  cmd->add_option("--out", a.out, "Output directory (overrides out_dir)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-output decoding toolkit"};
  app.require_subcommand(1);
  std::function<void()> action;

  GenEmbArgs gen;
  auto* g = app.add_subcommand("gen-emb", "Generate an embedding table");
  g->add_option("--kind", gen.kind, "uniform, hypercube, clumped or combined")->required();
  g->add_option("--dim", gen.dim, "Embedding dimension");
  g->add_option("--seed", gen.seed, "RNG seed");
  g->add_option("--vocab-size", gen.vocab_size, "Number of rows");
  g->add_option("--freq", gen.freq, "Frequency file (token<TAB>count); sets size, names and ranks");
  g->add_option("--alpha", gen.alpha, "Mixing weight of the pre-trained table (combined)");
  g->add_option("--clump-fraction", gen.clump_fraction, "Share of rare tokens (clumped)");
  g->add_option("--clump-cos", gen.clump_cos, "Cosine to the anchor (clumped)");
  g->add_option("--pre", gen.pre, "Pre-trained table file (combined)");
  g->add_option("--rand", gen.rand, "Random table file (combined)");
  g->add_option("--out", gen.out, "Output table file")->required();
  g->add_option("--format", gen.format, "binary or text-vec (default: by extension)");
  g->callback([&] { action = [&] { run_gen_emb(gen); }; });

  ProfileArgs prof;
  auto* p = app.add_subcommand("profile", "Nearest-neighbour geometry of a table");
  p->add_option("--table", prof.table, "Table file")->required();
  p->add_option("--freq", prof.freq, "Frequency file (default: row order is frequency order)");
  p->add_option("--k", prof.k, "Neighbours per token");
  p->add_option("--bin", prof.bin, "Rank bin width");
  p->add_option("--eps", prof.eps, "Near-duplicate threshold (cos >= 1 - eps)");
  p->add_option("--out", prof.out, "Output prefix")->required();
  p->callback([&] { action = [&] { run_profile(prof); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the toy continuous-output model");
  t->add_option("--task", tr.task, "copy, reverse or lexicon");
  t->add_option("--zipf", tr.zipf, "Zipf exponent of source tokens");
  t->add_option("--vocab", tr.vocab, "Vocabulary size (including EOS)");
  t->add_option("--pairs", tr.pairs, "Sentence pairs to generate");
  t->add_option("--min-len", tr.min_len);
  t->add_option("--max-len", tr.max_len);
  t->add_option("--heldout", tr.heldout, "Held-out fraction");
  t->add_option("--table", tr.table, "Target table file (default: generate --kind)");
  t->add_option("--kind", tr.kind, "Generated target table kind");
  t->add_option("--dim", tr.dim, "Generated target table dimension");
  t->add_option("--hidden", tr.hidden, "Recurrent state width (0 = dim)");
  t->add_option("--loss", tr.loss, "cosine or discrete");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch", tr.batch);
  t->add_option("--lr", tr.lr);
  t->add_option("--clip", tr.clip, "Gradient norm clip (<= 0 disables)");
  t->add_flag("--trainable", tr.trainable, "Also train the target table");
  t->add_option("--seed", tr.seed, "RNG seed")->required();
  t->add_option("--out", tr.out, "Output directory");
  t->callback([&] { action = [&] { run_train(tr); }; });

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "Greedy or beam decoding with a trained model");
  d->add_option("--model", dec.model, "model.ctoy checkpoint")->required();
  d->add_option("--table", dec.table, "Target table (default: targets.cemb next to the model)");
  d->add_option("--src-vocab", dec.src_vocab, "Source vocabulary (default: next to the model)");
  d->add_option("--input", dec.input, "Source sentences, one per line")->required();
  d->add_option("--beam", dec.beam, "Beam width (1 = greedy)");
  d->add_option("--nbest", dec.nbest, "Hypotheses to keep per sentence");
  d->add_option("--max-extra", dec.max_extra, "Length cap beyond the source length");
  d->add_option("--length-norm", dec.length_norm, "none or per-token");
  d->add_option("--score-sign", dec.score_sign, "plus or minus");
  d->add_option("--kappa", dec.kappa, "vMF concentration");
  d->add_option("--out", dec.out, "n-best TSV")->required();
  d->add_option("--hyps", dec.hyps, "Also write the 1-best output, one sentence per line");
  d->callback([&] { action = [&] { run_decode(dec); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Corpus BLEU or bucketed token F1");
  e->add_option("metric", ev.metric, "bleu or f1")->required();
  e->add_option("--hyps", ev.hyps)->required();
  e->add_option("--refs", ev.refs)->required();
  e->add_option("--freq", ev.freq, "Training frequencies (token<TAB>count)");
  e->add_option("--buckets", ev.buckets, "Bucket boundaries, e.g. \"10,1000\"");
  e->add_option("--out", ev.out, "Output prefix for .tsv and .json (default: stdout TSV)");
  e->callback([&] { action = [&] { run_eval(ev); }; });

  SweepArgs sa, sb, sf;
  auto* s1 = app.add_subcommand("sweep-alpha", "Combined-table runs over the alpha list");
  add_sweep_options(s1, sa);
  s1->callback([&] { action = [&] { run_sweep_alpha(sa); }; });
  auto* s2 = app.add_subcommand("sweep-beam", "Beam width sweep on one trained model");
  add_sweep_options(s2, sb);
  s2->callback([&] { action = [&] { run_sweep_beam(sb); }; });
  auto* s3 = app.add_subcommand("frequency", "Per-table frequency-bucket comparison");
  add_sweep_options(s3, sf);
  s3->callback([&] { action = [&] { run_frequency(sf); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }
  try {
    action();
  } catch (const StageFailure& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitStage;
  } catch (const InvalidArgument& err) {
    std::cerr << "invalid configuration: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitStage;
  }
  return 0;
}
