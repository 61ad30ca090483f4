#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "scpr/bench/bench.hpp"
#include "scpr/config/run_config.hpp"
#include "scpr/data/corpus.hpp"
#include "scpr/data/synth.hpp"
#include "scpr/eval/metrics.hpp"
#include "scpr/train/checkpoint.hpp"
#include "scpr/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace scpr;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SCPR_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("SCPR_SEED must be an integer, got '") + s + "'");
  return v;
}

std::uint64_t resolve_seed(std::uint64_t flag) { return env_seed().value_or(flag); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string task = "parallelogram";
  std::uint64_t seed = 1;
  std::string out;
  std::size_t groups = 40;
  std::size_t items = 5;
  std::string mode = "diagonal";
  std::string quads = SCPR_DATA_DIR "/analogy/quadruples.txt";
  std::string lexicon;
};

int run_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.task = parse_synth_task(a.task);
  spec.seed = resolve_seed(a.seed);
  spec.n_groups = a.groups;
  spec.items_per_prompt = a.items;
  spec.target_mode = parse_target_mode(a.mode);
  std::vector<SyntheticRecord> recs;
  switch (spec.task) {
    case SynthTask::kParallelogram:
      recs = gen_parallelogram(spec, load_quadruples(a.quads));
      break;
    case SynthTask::kListCompletion:
      recs = gen_list_completion(
          spec, load_lexicon(a.lexicon.empty() ? SCPR_DATA_DIR "/lexicon/categories.txt" : a.lexicon));
      break;
    case SynthTask::kChoice:
      recs = gen_choice(spec, load_lexicon(a.lexicon.empty() ? SCPR_DATA_DIR "/lexicon/objects.txt" : a.lexicon));
      break;
  }
  save_records(a.out, recs);
  std::cerr << "wrote " << recs.size() << " records to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainData {
  Vocab vocab;
  std::vector<std::vector<int>> train_seqs, valid_seqs;
  std::vector<EncodedRecord> train_recs, valid_recs;
  bool records = false;
};

TrainData load_train_data(const RunConfig& cfg, std::size_t seq_len) {
  TrainData d;
  const std::string format = cfg.get("data.format");
  const std::string train = cfg.get("data.train");
  const std::string valid = cfg.get("data.valid");
  if (train.empty()) throw ConfigError("data.train is not set");
  if (format == "text") {
    const auto docs = read_documents(train);
    d.vocab = cfg.get("data.vocab").empty() ? build_vocab(docs, cfg.get_size("data.vocab_cap"))
                                            : Vocab::load(cfg.get("data.vocab"));
    d.train_seqs = encode_documents(docs, d.vocab, seq_len);
    if (!valid.empty()) d.valid_seqs = encode_documents(read_documents(valid), d.vocab, seq_len);
  } else if (format == "records") {
    d.records = true;
    const auto recs = load_records(train, &d.vocab);
    if (!cfg.get("data.vocab").empty()) d.vocab = Vocab::load(cfg.get("data.vocab"));
    d.train_recs = encode_records(recs, d.vocab);
    if (!valid.empty()) d.valid_recs = encode_records(load_records(valid), d.vocab);
  } else {
    throw ConfigError("data.format must be text or records, got '" + format + "'");
  }
  return d;
}

void report_records(std::ostream& out, const LanguageModel<float>& lm,
                    const std::vector<EncodedRecord>& recs, const std::string& tag) {
  for (const auto& m : synthetic_kl(lm, recs))
    write_metric(out, "kl", m.value, tag.empty() ? m.split : tag + "/" + m.split);
  bool listed = false;
  for (const auto& r : recs) listed = listed || !r.forbidden.empty();
  if (listed) write_metric(out, "repeat_prob", repeat_prob(lm, recs), tag.empty() ? "all" : tag);
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  bool resume = false;
  bool init_only = false;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg.load_file(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (auto s = env_seed()) cfg.set("train.seed", std::to_string(*s));
  const TrainConfig tc = cfg.train_config();
  const HeadConfig hc = cfg.head_config();
  const std::size_t log_every = std::max<std::size_t>(1, cfg.get_size("train.log_every"));
  if (cfg.get_bool("model.seq2seq"))
    throw ModeError("the train command reads decoder-only data; model.seq2seq must be false");

  const TrainData data = load_train_data(cfg, tc.seq_len);
  const ModelConfig mc = cfg.model_config(data.vocab.size());
  if (!data.records && mc.max_seq_len < tc.seq_len)
    throw ConfigError("model.max_seq_len is smaller than train.seq_len");
  hc.validate(mc);

  fs::create_directories(a.out);
  const std::string ckpt = (fs::path(a.out) / "model.ckpt").string();
  {
    std::ofstream c(fs::path(a.out) / "config.txt");
    cfg.write(c);
    if (!c) throw DataError("cannot write " + (fs::path(a.out) / "config.txt").string());
  }
  data.vocab.save((fs::path(a.out) / "vocab.txt").string());
  std::cerr << "# resolved config\n";
  cfg.write(std::cerr);
  std::cerr << "# vocab " << data.vocab.size() << " words, head " << hc.label() << "\n";

  LanguageModel<float> lm(mc, hc, tc.seed);
  Trainer<float> trainer(lm, tc);
  if (a.resume) load_checkpoint(ckpt, lm.params(), &trainer.optimizer());
  if (a.init_only) {
    save_checkpoint(ckpt, lm.params(), &trainer.optimizer());
    return 0;
  }

  std::ofstream log(fs::path(a.out) / "loss.log", a.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write loss log in " + a.out);
  const auto loss = data.records ? records_loss(lm, data.train_recs, tc.batch_size, tc.seed)
                                 : corpus_loss(lm, data.train_seqs, tc.batch_size, tc.seed);
  auto hook = [&](const StepStats& s) {
    log << "step=" << s.step << " loss=" << fmt("%.6f", s.loss) << " lr=" << fmt("%.6g", s.lr) << '\n';
    log.flush();
    if (s.step % log_every == 0 || s.step == tc.steps)
      std::cerr << "step=" << s.step << " loss=" << fmt("%.6f", s.loss) << " lr=" << fmt("%.6g", s.lr) << '\n';
    if (tc.checkpoint_every > 0 && s.step % tc.checkpoint_every == 0)
      save_checkpoint(ckpt, lm.params(), &trainer.optimizer());
  };
  trainer.run(loss, tc.steps, hook);
  save_checkpoint(ckpt, lm.params(), &trainer.optimizer());

  if (data.records) {
    report_records(std::cout, lm, data.train_recs, "train");
    if (!data.valid_recs.empty()) report_records(std::cout, lm, data.valid_recs, "valid");
  } else if (!data.valid_seqs.empty()) {
    write_metric(std::cout, "perplexity", perplexity(lm, data.valid_seqs, cfg.get_size("eval.batch_size")),
                 "valid");
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct Loaded {
  RunConfig cfg;
  Vocab vocab;
  std::unique_ptr<LanguageModel<float>> lm;
};

// Accepts the training output directory or the model.ckpt inside it.
Loaded load_trained(const std::string& ckpt_arg) {
  fs::path dir(ckpt_arg), ckpt;
  if (fs::is_directory(dir)) {
    ckpt = dir / "model.ckpt";
  } else {
    ckpt = dir;
    dir = dir.parent_path();
    if (dir.empty()) dir = ".";
  }
  for (const fs::path& f : {ckpt, dir / "config.txt", dir / "vocab.txt"})
    if (!fs::exists(f)) throw DataError("checkpoint file '" + f.string() + "' does not exist");
  Loaded l;
  l.cfg.load_file((dir / "config.txt").string());
  l.vocab = Vocab::load((dir / "vocab.txt").string());
  const ModelConfig mc = l.cfg.model_config(l.vocab.size());
  if (mc.seq2seq) throw ModeError("evaluation and generation support decoder-only models");
  l.lm = std::make_unique<LanguageModel<float>>(mc, l.cfg.head_config(), 0);
  load_checkpoint(ckpt.string(), l.lm->params());
  return l;
}

std::vector<int> encode_prompt(const Vocab& vocab, const std::string& prompt) {
  std::vector<int> ids{kBosId};
  for (int id : vocab.encode(tokenize_words(prompt))) ids.push_back(id);
  return ids;
}

struct EvalArgs {
  std::string ckpt, data, format;
};

int run_eval(const EvalArgs& a) {
  Loaded l = load_trained(a.ckpt);
  std::string format = a.format;
  if (format.empty()) format = fs::exists(a.data + ".vocab") ? "records" : "text";
  if (format == "records") {
    report_records(std::cout, *l.lm, encode_records(load_records(a.data), l.vocab), "");
  } else if (format == "text") {
    const auto seqs = encode_documents(read_documents(a.data), l.vocab, l.cfg.get_size("train.seq_len"));
    write_metric(std::cout, "perplexity", perplexity(*l.lm, seqs, l.cfg.get_size("eval.batch_size")), "all");
    write_metric(std::cout, "unk_rate", unk_rate(seqs), "all");
  } else {
    throw ConfigError("--format must be text or records");
  }
  return 0;
}

struct GenerateArgs {
  std::string ckpt, prompt;
  std::size_t topk = 5;
  std::size_t len = 20;
  std::uint64_t seed = 1;
};

int run_generate(const GenerateArgs& a) {
  Loaded l = load_trained(a.ckpt);
  const auto prompt = encode_prompt(l.vocab, a.prompt);
  const auto out = generate_topk(*l.lm, prompt, a.topk, a.len, resolve_seed(a.seed));
  std::cout << l.vocab.decode(out) << '\n';
  write_metric(std::cout, "copy_rate", copy_rate(out, prompt), "prompt");
  return 0;
}

struct InspectArgs {
  std::string ckpt, prompt;
  std::size_t n = 5;
};

int run_inspect(const InspectArgs& a) {
  Loaded l = load_trained(a.ckpt);
  std::cout << "# " << l.lm->head_config().label() << " | " << a.prompt << '\n';
  for (const auto& [id, p] : inspect_topn(*l.lm, encode_prompt(l.vocab, a.prompt), a.n))
    std::cout << l.vocab.word(id) << '\t' << fmt("%.4f", p) << '\n';
  return 0;
}

int run_bench(const std::string& spec_path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!spec_path.empty()) cfg.load_file(spec_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (auto s = env_seed()) cfg.set("bench.seed", std::to_string(*s));
  BenchSpec spec = cfg.bench_spec();
  spec.validate();
  for (const auto& h : spec.heads)
    for (std::size_t d : spec.d_models)
      for (std::size_t v : spec.vocab_sizes) {
        write_bench(std::cout, bench_head(h, v, d, spec));
        std::cout.flush();
      }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Softmax-CPR toy language models: synthesis, training, evaluation, benchmarks"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write synthetic next-word records");
  synth->add_option("--task", sa.task, "parallelogram, list or choice")->required();
  synth->add_option("--seed", sa.seed, "generator seed (SCPR_SEED overrides)");
  synth->add_option("--out", sa.out, "records file; PATH.vocab receives the vocabulary")->required();
  synth->add_option("--groups", sa.groups, "quadruples or categories drawn");
  synth->add_option("--items", sa.items, "listed items per prompt");
  synth->add_option("--mode", sa.mode, "diagonal or edge (parallelogram)");
  synth->add_option("--quads", sa.quads, "quadruple file");
  synth->add_option("--lexicon", sa.lexicon, "category lexicon");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint directory");
  train->add_option("--config", ta.config, "key = value config file");
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--set", ta.overrides, "key=value override, repeatable");
  train->add_flag("--resume", ta.resume, "continue from OUT/model.ckpt");
  train->add_flag("--init-only", ta.init_only, "write the initialised model without training");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "perplexity or synthetic KL of a checkpoint");
  eval->add_option("--ckpt", ea.ckpt, "checkpoint file or training directory")->required();
  eval->add_option("--data", ea.data, "text corpus or records file")->required();
  eval->add_option("--format", ea.format, "text or records (default: records when PATH.vocab exists)");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "top-K sampling from a prompt");
  gen->add_option("--ckpt", ga.ckpt)->required();
  gen->add_option("--prompt", ga.prompt)->required();
  gen->add_option("--topk", ga.topk);
  gen->add_option("--len", ga.len);
  gen->add_option("--seed", ga.seed, "sampling seed (SCPR_SEED overrides)");

  InspectArgs ia;
  auto* insp = app.add_subcommand("inspect", "most probable next words after a prompt");
  insp->add_option("--ckpt", ia.ckpt)->required();
  insp->add_option("--prompt", ia.prompt)->required();
  insp->add_option("--n", ia.n);

  std::string bench_spec;
  std::vector<std::string> bench_overrides;
  auto* bench = app.add_subcommand("bench", "time output heads on random hidden states");
  bench->add_option("--spec", bench_spec, "config file with bench.* keys");
  bench->add_option("--set", bench_overrides, "key=value override, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*gen) return run_generate(ga);
    if (*insp) return run_inspect(ia);
    if (*bench) return run_bench(bench_spec, bench_overrides);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const IndexError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}
