#include "conmt/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "conmt/error.hpp"
#include "conmt/rng.hpp"

namespace conmt {

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidArgument("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(parse_value<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "task") task = parse_task_kind(value);
  else if (key == "vocab") vocab = parse_value<std::size_t>(key, value);
  else if (key == "zipf") zipf = parse_value<double>(key, value);
  else if (key == "min_len") min_len = parse_value<std::size_t>(key, value);
  else if (key == "max_len") max_len = parse_value<std::size_t>(key, value);
  else if (key == "pairs") pairs = parse_value<std::size_t>(key, value);
  else if (key == "heldout_fraction") heldout_fraction = parse_value<double>(key, value);
  else if (key == "dim") dim = parse_value<std::size_t>(key, value);
  else if (key == "tables") tables = split_list(value);
  else if (key == "clump_fraction") clump_fraction = parse_value<double>(key, value);
  else if (key == "clump_cos") clump_cos = parse_value<double>(key, value);
  else if (key == "alpha") alpha = parse_value<double>(key, value);
  else if (key == "alphas") alphas = parse_list<double>(key, value);
  else if (key == "hidden") hidden = parse_value<std::size_t>(key, value);
  else if (key == "loss") loss = parse_loss_kind(value);
  else if (key == "learning_rate") learning_rate = parse_value<double>(key, value);
  else if (key == "epochs") epochs = parse_value<std::size_t>(key, value);
  else if (key == "batch_size") batch_size = parse_value<std::size_t>(key, value);
  else if (key == "clip") clip = parse_value<double>(key, value);
  else if (key == "seeds") seeds = parse_list<std::uint64_t>(key, value);
  else if (key == "beams") beams = parse_list<std::size_t>(key, value);
  else if (key == "length_norm") length_norm = parse_length_norm(value);
  else if (key == "score_sign") score_sign = parse_score_sign(value);
  else if (key == "max_extra") max_extra = parse_value<std::size_t>(key, value);
  else if (key == "buckets") buckets = parse_list<std::uint64_t>(key, value);
  else if (key == "out_dir") out_dir = value;
  else throw InvalidArgument("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) +
                            ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  return parse(in);
}

void ExperimentConfig::write(std::ostream& out) const {
  std::ostringstream num;
  auto d = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  out << "task = " << to_string(task) << '\n'
      << "vocab = " << vocab << '\n'
      << "zipf = " << d(zipf) << '\n'
      << "min_len = " << min_len << '\n'
      << "max_len = " << max_len << '\n'
      << "pairs = " << pairs << '\n'
      << "heldout_fraction = " << d(heldout_fraction) << '\n'
      << "dim = " << dim << '\n'
      << "tables = " << join(tables) << '\n'
      << "clump_fraction = " << d(clump_fraction) << '\n'
      << "clump_cos = " << d(clump_cos) << '\n'
      << "alpha = " << d(alpha) << '\n'
      << "alphas = " << join(alphas) << '\n'
      << "hidden = " << hidden << '\n'
      << "loss = " << to_string(loss) << '\n'
      << "learning_rate = " << d(learning_rate) << '\n'
      << "epochs = " << epochs << '\n'
      << "batch_size = " << batch_size << '\n'
      << "clip = " << d(clip) << '\n'
      << "seeds = " << join(seeds) << '\n'
      << "beams = " << join(beams) << '\n'
      << "length_norm = " << to_string(length_norm) << '\n'
      << "score_sign = " << to_string(score_sign) << '\n'
      << "max_extra = " << max_extra << '\n'
      << "buckets = " << join(buckets) << '\n'
      << "out_dir = " << out_dir.string() << '\n';
}

void ExperimentConfig::validate() const {
  if (vocab < 2) throw InvalidArgument("config: vocab must be >= 2");
  if (dim < 2) throw InvalidArgument("config: dim must be >= 2");
  if (seeds.empty()) throw InvalidArgument("config: seeds must not be empty");
  if (tables.empty()) throw InvalidArgument("config: tables must not be empty");
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw InvalidArgument("config: heldout_fraction must lie in (0, 1)");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("config: alpha outside [0, 1]");
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("config: alphas outside [0, 1]");
  }
  for (auto b : beams) {
    if (b == 0) throw InvalidArgument("config: beam widths must be >= 1");
  }
  if (batch_size == 0) throw InvalidArgument("config: batch_size must be >= 1");
  if (min_len == 0 || min_len > max_len) {
    throw InvalidArgument("config: need 1 <= min_len <= max_len");
  }
  BucketSpec check(buckets);
  (void)check;
}

// ---------------------------------------------------------------------------
// Experiments

ExperimentData make_experiment_data(const ExperimentConfig& config, std::uint64_t seed) {
  ToyTask task;
  task.kind = config.task;
  task.src_vocab = config.vocab;
  task.tgt_vocab = config.vocab;
  task.zipf = config.zipf;
  task.min_len = config.min_len;
  task.max_len = config.max_len;
  task.pairs = config.pairs;
  task.seed = seed;
  ExperimentData data;
  data.dataset = gen_task(task);
  std::tie(data.train, data.heldout) =
      split_heldout(data.dataset.pairs, config.heldout_fraction, seed);
  data.train_vocab = count_target_frequencies(data.train, data.dataset.tgt_vocab);
  if (config.buckets.empty()) {
    // EOS never appears in evaluated sequences, so it does not count toward
    // the mass split.
    std::vector<std::uint64_t> freq(data.train_vocab.freqs().begin(),
                                    data.train_vocab.freqs().end());
    freq[kEos] = 0;
    data.buckets = BucketSpec::from_frequency_mass(Vocab(data.train_vocab.tokens(), freq));
  } else {
    data.buckets = BucketSpec(config.buckets);
  }
  return data;
}

EmbeddingTable make_table(const std::string& name, const ExperimentConfig& config,
                          const ExperimentData& data, std::uint64_t seed) {
  const std::size_t v = data.train_vocab.size();
  const std::uint64_t uniform_seed = splitmix64(seed ^ 0x11);
  const std::uint64_t clumped_seed = splitmix64(seed ^ 0x22);
  auto clumped = [&] {
    return gen_clumped(v, config.dim, clumped_seed, config.clump_fraction,
                       config.clump_cos, &data.train_vocab);
  };
  EmbeddingTable table;
  if (name == "uniform") {
    table = gen_uniform(v, config.dim, uniform_seed);
  } else if (name == "hypercube") {
    table = gen_hypercube(v, config.dim, uniform_seed).table;
  } else if (name == "clumped") {
    table = clumped();
  } else if (name == "combined" || name.starts_with("combined@")) {
    const double alpha = name == "combined"
                             ? config.alpha
                             : parse_value<double>("table", name.substr(9));
    table = combine(clumped(), gen_uniform(v, config.dim, uniform_seed), alpha);
  } else {
    throw InvalidArgument("unknown table '" + name + "'");
  }
  table.set_tokens(data.train_vocab.tokens());
  return table;
}

RunMetrics run_single(const ExperimentConfig& config, const ExperimentData& data,
                      const std::string& table_name, const EmbeddingTable& table,
                      std::uint64_t seed) {
  if (table.rows() != config.vocab || table.dim() != config.dim) {
    throw InvalidArgument("table '" + table_name + "' has shape " +
                          std::to_string(table.rows()) + "x" + std::to_string(table.dim()) +
                          ", expected " + std::to_string(config.vocab) + "x" +
                          std::to_string(config.dim));
  }
  ModelConfig mc;
  mc.src_vocab = config.vocab;
  mc.hidden = config.hidden;
  mc.max_positions = config.max_len + 2;
  mc.seed = seed;
  ToySeq2Seq model(mc, std::make_shared<const EmbeddingTable>(table));
  TrainConfig tc;
  tc.learning_rate = config.learning_rate;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.loss = config.loss;
  tc.seed = seed;
  tc.clip = config.clip;
  tc.evaluate = false;
  train(model, data.train, data.heldout, tc);

  const auto hyps = decode_all(model, data.heldout, config.max_extra);
  std::vector<Sentence> refs;
  refs.reserve(data.heldout.size());
  for (const auto& p : data.heldout) refs.push_back(p.tgt);
  RunMetrics m;
  m.table = table_name;
  m.seed = seed;
  m.bleu = corpus_bleu(hyps, refs);
  m.accuracy = token_accuracy(hyps, data.heldout);
  m.f1 = token_f1_by_bucket(hyps, refs, data.train_vocab, data.buckets);
  return m;
}

namespace {

double mean_of(const std::vector<RunMetrics>& runs, const std::string& table,
               double (*get)(const RunMetrics&)) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.table == table) {
      s += get(r);
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("no runs for table '" + table + "'");
  return s / static_cast<double>(n);
}

}  // namespace

double FrequencyReport::mean_rare_f1(const std::string& table) const {
  return mean_of(runs, table, [](const RunMetrics& r) { return r.rare_f1(); });
}
double FrequencyReport::mean_frequent_f1(const std::string& table) const {
  return mean_of(runs, table, [](const RunMetrics& r) { return r.frequent_f1(); });
}
double FrequencyReport::mean_bleu(const std::string& table) const {
  return mean_of(runs, table, [](const RunMetrics& r) { return r.bleu; });
}

std::string FrequencyReport::to_tsv() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "table\tseed\tbleu\taccuracy\trare_f1\tfrequent_f1\n";
  for (const auto& r : runs) {
    out << r.table << '\t' << r.seed << '\t' << r.bleu << '\t' << r.accuracy << '\t'
        << r.rare_f1() << '\t' << r.frequent_f1() << '\n';
  }
  return out.str();
}

FrequencyReport frequency_experiment(const ExperimentConfig& config) {
  config.validate();
  FrequencyReport report;
  for (auto seed : config.seeds) {
    const auto data = make_experiment_data(config, seed);
    std::vector<EmbeddingTable> tables;
    for (const auto& name : config.tables) {
      tables.push_back(make_table(name, config, data, seed));
      if (tables.back().rows() != tables.front().rows() ||
          tables.back().dim() != tables.front().dim()) {
        throw InvalidArgument("frequency_experiment: tables differ in shape");
      }
    }
    for (std::size_t t = 0; t < tables.size(); ++t) {
      report.runs.push_back(run_single(config, data, config.tables[t], tables[t], seed));
    }
  }
  return report;
}

std::vector<AlphaRow> run_sweep(const ExperimentConfig& config) {
  if (config.alphas.empty()) throw InvalidArgument("run_sweep: empty alpha list");
  config.validate();
  ExperimentConfig cfg = config;
  cfg.tables.clear();
  for (double a : config.alphas) {
    std::ostringstream name;
    name.precision(17);
    name << "combined@" << a;
    cfg.tables.push_back(name.str());
  }
  const auto report = frequency_experiment(cfg);
  std::vector<AlphaRow> rows;
  for (std::size_t i = 0; i < config.alphas.size(); ++i) {
    const auto& name = cfg.tables[i];
    rows.push_back({config.alphas[i], report.mean_bleu(name), report.mean_rare_f1(name),
                    report.mean_frequent_f1(name)});
  }
  return rows;
}

std::string alpha_tsv(const std::vector<AlphaRow>& rows) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "alpha\tbleu_like\trare_f1\tfrequent_f1\n";
  for (const auto& r : rows) {
    out << r.alpha << '\t' << r.bleu_like << '\t' << r.rare_f1 << '\t' << r.frequent_f1
        << '\n';
  }
  return out.str();
}

std::vector<BeamRow> run_beam_sweep(const ExperimentConfig& config, const ToySeq2Seq& model,
                                    const std::vector<Pair>& heldout) {
  if (config.beams.empty()) throw InvalidArgument("run_beam_sweep: empty beam list");
  const NNIndex index(model.targets_trainable()
                          ? std::make_shared<const EmbeddingTable>(model.export_targets())
                          : model.initial_targets());
  DecodeOptions opts;
  opts.eos = kEos;
  opts.max_extra = config.max_extra;
  opts.sign = config.score_sign;
  opts.length_norm = config.length_norm;
  auto step = model.step_function();

  std::vector<Sentence> refs;
  for (const auto& p : heldout) refs.push_back(p.tgt);
  std::vector<Sentence> greedy;
  for (const auto& p : heldout) greedy.push_back(greedy_decode(step, index, p.src, opts).tokens);
  const double greedy_bleu = corpus_bleu(greedy, refs);

  std::vector<BeamRow> rows;
  for (auto b : config.beams) {
    std::vector<Sentence> out;
    double ll = 0.0;
    for (const auto& p : heldout) {
      auto best = beam_decode(step, index, p.src, b, opts).front();
      ll += best.score;
      out.push_back(std::move(best.tokens));
    }
    const double bleu = corpus_bleu(out, refs);
    rows.push_back({b, bleu, bleu - greedy_bleu,
                    heldout.empty() ? 0.0 : ll / static_cast<double>(heldout.size())});
  }
  return rows;
}

std::vector<BeamRow> run_beam_sweep(const ExperimentConfig& config) {
  config.validate();
  const auto seed = config.seeds.front();
  const auto data = make_experiment_data(config, seed);
  auto table = std::make_shared<const EmbeddingTable>(
      make_table(config.tables.front(), config, data, seed));
  ModelConfig mc;
  mc.src_vocab = config.vocab;
  mc.hidden = config.hidden;
  mc.max_positions = config.max_len + 2;
  mc.seed = seed;
  ToySeq2Seq model(mc, table);
  TrainConfig tc;
  tc.learning_rate = config.learning_rate;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.loss = config.loss;
  tc.seed = seed;
  tc.clip = config.clip;
  tc.evaluate = false;
  train(model, data.train, data.heldout, tc);
  return run_beam_sweep(config, model, data.heldout);
}

std::string beam_tsv(const std::vector<BeamRow>& rows) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "beam\tscore\tdelta_vs_greedy\n";
  for (const auto& r : rows) {
    out << r.beam << '\t' << r.score << '\t' << r.delta_vs_greedy << '\n';
  }
  return out.str();
}

}  // namespace conmt
