// unimc: corpus generation, training, evaluation, self-chat and a chat REPL.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or a
// missing input file).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "unimc/metrics/evaluation.hpp"
#include "unimc/pipeline/chat.hpp"
#include "unimc/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace unimc;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::uint64_t seed = 2022;

  // files
  std::string corpus, checkpoint, checkpoint_b, out, pool, log, report, manifest;

  // corpus
  int dialogues = 200;
  std::string templates = "default";

  // model
  int d_model = 64, heads = 4, enc_layers = 2, dec_layers = 2, d_ff = 0, max_positions = 256;
  std::string fusion = "fid", relevance = "shared";

  // training
  int epochs = 1, max_steps = 0, cs_batch = 8, mr_batch = 8, mag_batch = 8;
  int context_utterances = 3, mr_scale = 5, k_neg = 3;
  double lr = 5e-5;

  // decoding
  std::string eg = "off";
  double alpha = 1.0, lambda = 0.9;
  int beam = 1, max_new_tokens = 64, top_k = 10, retrieve_k = 3;

  // eval
  std::string tasks = "cs,mr,mag";
  int max_samples = 0, recall_k = 5;

  // self-chat
  int episodes = 1, sessions = 4, rounds = 16;

  bool verbose = false;

  // recorded by run manifests, ignored on input
  std::string recorded_command, recorded_checkpoint_hash, recorded_corpus_hash;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing --") + what);
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " file not found: " + path);
}

void require_checkpoint(const std::string& path) {
  require_file(path, "checkpoint");
  if (!fs::is_regular_file(numerics::manifest_path(path))) {
    throw UsageError("checkpoint manifest not found: " + numerics::manifest_path(path));
  }
}

model::ModelConfig model_config(const Options& o) {
  model::ModelConfig c;
  c.d_model = o.d_model;
  c.n_heads = o.heads;
  c.n_enc_layers = o.enc_layers;
  c.n_dec_layers = o.dec_layers;
  c.d_ff = o.d_ff;
  c.max_positions = o.max_positions;
  c.fusion = model::parse_fusion(o.fusion);
  c.relevance = model::parse_relevance(o.relevance);
  c.init_seed = o.seed;
  c.validate();
  return c;
}

training::ExampleOptions example_options(const Options& o) {
  training::ExampleOptions e;
  e.context_utterances = o.context_utterances;
  e.mr_scale = o.mr_scale;
  e.k_neg = o.k_neg;
  e.seed = o.seed;
  return e;
}

pipeline::DecodeConfig decode_config(const Options& o) {
  pipeline::DecodeConfig d;
  d.beam_size = o.beam;
  d.max_new_tokens = o.max_new_tokens;
  d.eg_enabled = o.eg == "on";
  d.alpha = o.alpha;
  d.top_k_vocab = o.top_k;
  d.retrieve_k = o.retrieve_k;
  d.validate();
  return d;
}

std::unique_ptr<model::Model<float>> load_model(const std::string& path) {
  require_checkpoint(path);
  return model::Model<float>::from_checkpoint(path);
}

std::string hash_or_empty(const std::string& path) {
  return !path.empty() && fs::is_regular_file(path) ? numerics::file_hash(path) : std::string();
}

/// Writes every option value (defaults included) as a config file that
/// `--config` accepts, plus the hashes of the files involved.
void write_run_manifest(CLI::App& app, Options& o, const std::string& command, const std::string& fallback) {
  const std::string path = !o.manifest.empty() ? o.manifest : fallback;
  // config_to_str prints parsed results, falling back to the default string
  auto record = [&](const char* name, const std::string& value) {
    auto* opt = app.get_option(name);
    opt->clear();
    opt->default_str(value);
  };
  record("--recorded-command", command);
  record("--recorded-checkpoint-hash", hash_or_empty(o.checkpoint));
  record("--recorded-corpus-hash", hash_or_empty(o.corpus));
  if (command == "train") record("--checkpoint", o.checkpoint);
  std::ofstream os(path);
  if (!os) throw Error("cannot write run manifest " + path);
  os << app.config_to_str(true, false);
}

int cmd_gen_corpus(const Options& o) {
  if (o.out.empty()) throw UsageError("gen-corpus: missing --out");
  if (o.dialogues < 1) throw UsageError("gen-corpus: --dialogues must be >= 1");
  const auto c = corpus::generate_corpus(o.dialogues, o.seed, o.templates);
  corpus::write_corpus(o.out, c);
  const auto& m = c.manifest;
  std::cout << "wrote " << o.out << ": " << m.n_dialogues << " dialogues, " << m.total_turns << " turns, "
            << m.revealing_turns << " revealing, " << m.grounded_turns << " grounded, " << m.neutral_turns
            << " neutral\n";
  return 0;
}

int cmd_train(const Options& o) {
  require_file(o.corpus, "corpus");
  if (o.out.empty()) throw UsageError("train: missing --out checkpoint path");
  if (o.epochs < 0) throw UsageError("train: --epochs must be >= 0");
  const auto c = corpus::read_corpus(o.corpus);
  model::Model<float> m(model_config(o));
  if (o.epochs == 0) {
    // initial weights only; useful as an untrained baseline
    m.save(o.out);
    std::cout << "wrote untrained checkpoint " << o.out << "\n";
    return 0;
  }
  const auto data = training::TrainingSet::build(c, example_options(o));
  training::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.max_steps = o.max_steps;
  tc.cs_batch = o.cs_batch;
  tc.mr_batch = o.mr_batch;
  tc.mag_batch = o.mag_batch;
  tc.adam.lr = o.lr;
  tc.seed = o.seed;
  tc.examples = example_options(o);
  tc.checkpoint_path = o.out;
  tc.log_path = o.log;
  std::cout << "examples: cs " << data.cs.size() << ", mr " << data.mr.size() << ", mag " << data.mag.size() << "\n";
  const auto r = training::train(m, data, tc, [&](const training::StepLog& s) {
    if (o.verbose || s.step % 100 == 0) std::cout << training::format_log_line(s) << std::endl;
  });
  m.save(o.out);
  std::cout << "trained " << r.steps << " steps over " << r.epochs << " epochs; wrote " << o.out << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  require_file(o.corpus, "corpus");
  const auto m = load_model(o.checkpoint);
  const auto c = corpus::read_corpus(o.corpus);
  const auto eo = example_options(o);
  metrics::EvalOptions opt;
  opt.decode = decode_config(o);
  opt.max_samples = static_cast<std::size_t>(std::max(0, o.max_samples));
  opt.recall_k = static_cast<std::size_t>(o.recall_k);

  std::vector<std::pair<std::string, metrics::EvalReport>> reports;
  for (const auto& task : corpus::detail_io::split(o.tasks, ',')) {
    if (task == "cs") {
      reports.emplace_back("summarization", metrics::evaluate_summarization(*m, training::make_cs_examples(c, eo), opt));
    } else if (task == "mr") {
      reports.emplace_back("retrieval", metrics::evaluate_retrieval(*m, c, eo, opt));
    } else if (task == "mag") {
      reports.emplace_back("generation", metrics::evaluate_generation(*m, c, training::make_mag_examples(c, eo), opt));
    } else {
      throw UsageError("eval: unknown task '" + task + "' (expected cs, mr, mag)");
    }
  }
  std::ofstream file;
  if (!o.report.empty()) {
    file.open(o.report);
    if (!file) throw Error("cannot write report " + o.report);
  }
  for (const auto& [name, r] : reports) {
    std::cout << name << ' ' << r.to_string() << "\n";
    if (file) file << name << ' ' << r.to_string() << '\n';
  }
  return 0;
}

int cmd_self_chat(const Options& o) {
  if (o.out.empty()) throw UsageError("self-chat: missing --out transcript path");
  const auto a = load_model(o.checkpoint);
  const auto b = o.checkpoint_b.empty() ? nullptr : load_model(o.checkpoint_b);
  pipeline::SelfChatConfig sc;
  sc.episodes = o.episodes;
  sc.sessions_per_episode = o.sessions;
  sc.rounds_per_session = o.rounds;
  sc.seed = o.seed;
  sc.lambda = o.lambda;
  sc.context_utterances = o.context_utterances;
  const auto episodes = pipeline::self_chat(*a, b ? *b : *a, pipeline::default_openings(), sc, decode_config(o));
  pipeline::write_transcripts(o.out, episodes);
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    std::cout << "episode " << e << ": " << ep.lines.size() << " lines, final pools a=" << ep.pool_sizes_a.back()
              << " b=" << ep.pool_sizes_b.back() << "\n";
  }
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

int cmd_chat(const Options& o) {
  const auto m = load_model(o.checkpoint);
  const auto cfg = decode_config(o);
  pipeline::ChatState<float> state(o.lambda, o.context_utterances);
  if (!o.pool.empty() && fs::exists(o.pool)) state.pool = memory::MemoryPool<float>::load(o.pool, *m, o.lambda);
  std::cout << "commands: /new starts a session, /pool lists memories, /quit exits\n";
  std::string line;
  while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
    if (line == "/quit") break;
    if (line == "/new") {
      state.new_session();
      std::cout << "(new session)\n";
      continue;
    }
    if (line == "/pool") {
      for (const auto& e : state.pool.entries()) std::cout << "  " << e.id() << ' ' << e.memory->text << "\n";
      continue;
    }
    if (line.empty()) continue;
    if (!corpus::Tokenizer::in_alphabet(line)) {
      std::cout << "(some characters are outside the vocabulary and will read as unknown)\n";
    }
    const auto t = pipeline::chat_step(state, line, *m, cfg);
    if (o.verbose) {
      for (std::size_t i = 0; i < t.retrieved.size(); ++i) {
        std::cout << "  [retrieved " << t.retrieved_ids[i] << "] " << t.retrieved[i].text << "\n";
      }
      for (std::size_t i = 0; i < t.written.size(); ++i) {
        const auto& w = t.outcomes[i];
        std::cout << "  [" << (w.kind == memory::WriteOutcome::APPENDED ? "appended" : "replaced") << ' '
                  << model::role_name(t.written[i].owner) << ':' << w.index << "] " << t.written[i].text << "\n";
      }
    }
    std::cout << "bot: " << t.response << "\n";
  }
  if (!o.pool.empty()) state.pool.persist(o.pool);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified memory-augmented persona dialogue: train, evaluate, chat"};
  app.set_config("--config", "", "flat key=value file; flags given on the command line win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  Options o;

  app.add_option("--seed", o.seed, "seed for corpus, init, sampling and shuffling")->capture_default_str();
  app.add_option("--corpus", o.corpus, "corpus file (tab-separated)");
  app.add_option("--checkpoint", o.checkpoint, "model checkpoint");
  app.add_option("--checkpoint-b", o.checkpoint_b, "second agent for self-chat (defaults to --checkpoint)");
  app.add_option("--out", o.out, "output path (corpus, checkpoint or transcript)");
  app.add_option("--pool", o.pool, "memory pool file for chat; loaded if present, saved on exit");
  app.add_option("--log", o.log, "training log (appended)");
  app.add_option("--report", o.report, "also write eval reports here");
  app.add_option("--manifest", o.manifest, "run manifest path (default: next to the main output)");

  app.add_option("--dialogues", o.dialogues, "dialogues to generate")->capture_default_str();
  app.add_option("--templates", o.templates, "template set")->capture_default_str();

  app.add_option("--d-model", o.d_model)->capture_default_str();
  app.add_option("--heads", o.heads)->capture_default_str();
  app.add_option("--enc-layers", o.enc_layers)->capture_default_str();
  app.add_option("--dec-layers", o.dec_layers)->capture_default_str();
  app.add_option("--d-ff", o.d_ff, "feed-forward width, 0 for 4*d_model")->capture_default_str();
  app.add_option("--max-positions", o.max_positions)->capture_default_str();
  app.add_option("--fusion", o.fusion)->check(CLI::IsMember({"fid", "fie"}))->capture_default_str();
  app.add_option("--relevance", o.relevance)->check(CLI::IsMember({"shared", "diff", "none"}))->capture_default_str();

  app.add_option("--epochs", o.epochs, "0 writes the untrained model")->capture_default_str();
  app.add_option("--max-steps", o.max_steps, "0 for no cap")->capture_default_str();
  app.add_option("--lr", o.lr)->capture_default_str();
  app.add_option("--cs-batch", o.cs_batch)->capture_default_str();
  app.add_option("--mr-batch", o.mr_batch)->capture_default_str();
  app.add_option("--mag-batch", o.mag_batch)->capture_default_str();
  app.add_option("--context-utterances", o.context_utterances)->capture_default_str();
  app.add_option("--mr-scale", o.mr_scale, "retrieval samples per eligible turn")->capture_default_str();
  app.add_option("--k-neg", o.k_neg, "memory passages per generation example")->capture_default_str();

  app.add_option("--eg", o.eg, "guided decoding")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  app.add_option("--alpha", o.alpha, "guidance weight")->capture_default_str();
  app.add_option("--top-k", o.top_k, "guidance candidate count")->capture_default_str();
  app.add_option("--beam", o.beam)->capture_default_str();
  app.add_option("--max-new-tokens", o.max_new_tokens)->capture_default_str();
  app.add_option("--retrieve-k", o.retrieve_k)->capture_default_str();
  app.add_option("--lambda", o.lambda, "duplicate threshold for pool writes")->capture_default_str();

  app.add_option("--tasks", o.tasks, "eval subtasks, comma separated")->capture_default_str();
  app.add_option("--max-samples", o.max_samples, "0 for every example")->capture_default_str();
  app.add_option("--recall-k", o.recall_k)->capture_default_str();

  app.add_option("--episodes", o.episodes)->capture_default_str();
  app.add_option("--sessions", o.sessions)->capture_default_str();
  app.add_option("--rounds", o.rounds)->capture_default_str();
  app.add_flag("-v,--verbose", o.verbose, "chat: print retrieved and written memories; train: log every step");

  app.add_option("--recorded-command", o.recorded_command)->group("");
  app.add_option("--recorded-checkpoint-hash", o.recorded_checkpoint_hash)->group("");
  app.add_option("--recorded-corpus-hash", o.recorded_corpus_hash)->group("");

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic persona corpus");
  auto* train = app.add_subcommand("train", "joint training on a corpus");
  auto* eval = app.add_subcommand("eval", "summarization, retrieval and generation reports");
  auto* self = app.add_subcommand("self-chat", "two agents talk over several sessions");
  auto* chat = app.add_subcommand("chat", "interactive REPL");
  for (auto* s : {gen, train, eval, self, chat}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) {
      const int rc = cmd_gen_corpus(o);
      write_run_manifest(app, o, "gen-corpus", o.out + ".run");
      return rc;
    }
    if (*train) {
      const int rc = cmd_train(o);
      o.checkpoint = o.out;
      write_run_manifest(app, o, "train", o.out + ".run");
      return rc;
    }
    if (*eval) {
      const int rc = cmd_eval(o);
      write_run_manifest(app, o, "eval", o.report.empty() ? "eval.run" : o.report + ".run");
      return rc;
    }
    if (*self) {
      const int rc = cmd_self_chat(o);
      write_run_manifest(app, o, "self-chat", o.out + ".run");
      return rc;
    }
    const int rc = cmd_chat(o);
    write_run_manifest(app, o, "chat", o.pool.empty() ? "chat.run" : o.pool + ".run");
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}
