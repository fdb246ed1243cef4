#include "cli/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "CLI11.hpp"
#include "cir/annotate.hpp"
#include "cir/dataset.hpp"
#include "cir/embedding_store.hpp"
#include "cir/error.hpp"
#include "cir/evaluation.hpp"
#include "cir/metrics.hpp"
#include "cir/trainer.hpp"
#include "cli/run_config.hpp"

namespace cir::cli {
namespace {

namespace fs = std::filesystem;

// Thrown for problems with what the user asked for rather than with the
// data; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path manifest_path(const std::string& p) {
  fs::path path(p);
  if (fs::is_directory(path)) path /= "manifest.json";
  return path;
}

void require_path(const std::string& value, const char* flag) {
  if (value.empty()) {
    throw UsageError(std::string("missing required ") + flag);
  }
}

void require_file(const std::string& value, const char* flag) {
  require_path(value, flag);
  if (!fs::exists(value)) {
    throw Error(ErrorCode::kMissingFile,
                std::string(flag) + ": no such file '" + value + "'");
  }
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::kIo, "short write to " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kMissingFile, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Every id a triplet mentions must exist in the gallery.
void check_triplet_ids(const EmbeddingMatrix& gallery,
                       std::span<const Triplet> triplets) {
  for (const auto& t : triplets) {
    auto check = [&](const std::string& id) {
      if (!gallery.contains(id)) {
        throw Error(ErrorCode::kUnknownId, "triplet '" + t.pair_id +
                                               "' references unknown id '" +
                                               id + "'");
      }
    };
    check(t.reference_id);
    check(t.target_id);
    if (t.subset_ids) {
      for (const auto& id : *t.subset_ids) check(id);
    }
    if (t.gt_ids) {
      for (const auto& id : *t.gt_ids) check(id);
    }
  }
}

std::string percent(double v) { return format_percent(v); }

// Flags shared by several commands. Each is applied only when given.
struct Flags {
  std::string config;
  bool print_config = false;
  CLI::Option* seed_opt = nullptr;
  std::uint64_t seed = 0;

  std::string embeddings, triplets, nli, annotations, accepted, rejected;
  std::string checkpoint, init_checkpoint, loss_log, report, results, out;

  CLI::Option* stage_opt = nullptr;
  int stage = 2;
  std::string annotation_mode;
  std::string optimizer;
  CLI::Option* epochs_opt = nullptr;
  std::size_t epochs = 0;
  CLI::Option* lr_opt = nullptr;
  double lr = 0.0;
  CLI::Option* batch_opt = nullptr;
  std::size_t batch_size = 0;
  CLI::Option* lambda_txt_opt = nullptr;
  double lambda_txt = 0.0;
  CLI::Option* lambda_info_opt = nullptr;
  double lambda_info = 0.0;
  bool from_scratch = false;

  bool mock = false;
  std::string generator_url;
  std::vector<std::string> judge_urls;
  CLI::Option* judges_opt = nullptr;
  std::size_t judges = 0;
  CLI::Option* mean_opt = nullptr;
  double mean_threshold = 0.0;
  CLI::Option* range_opt = nullptr;
  int max_range = 0;

  std::vector<std::size_t> k_list, subset_k_list, map_k_list;

  CLI::Option* items_opt = nullptr;
  std::size_t items = 0;
  CLI::Option* attrs_opt = nullptr;
  std::size_t attrs = 0;
  CLI::Option* ntrip_opt = nullptr;
  std::size_t n_triplets = 0;
  CLI::Option* ntest_opt = nullptr;
  std::size_t n_test = 0;
};

void set_if(std::string& dst, const std::string& src) {
  if (!src.empty()) dst = src;
}

RunConfig resolve_config(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(f.config));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config " + f.config + ": " + e.what());
    }
    try {
      apply_json(c, j);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (f.seed_opt && f.seed_opt->count()) c.seed = f.seed;

  auto& p = c.paths;
  set_if(p.embeddings, f.embeddings);
  set_if(p.triplets, f.triplets);
  set_if(p.nli, f.nli);
  set_if(p.annotations, f.annotations);
  set_if(p.accepted, f.accepted);
  set_if(p.rejected, f.rejected);
  set_if(p.checkpoint, f.checkpoint);
  set_if(p.init_checkpoint, f.init_checkpoint);
  set_if(p.loss_log, f.loss_log);
  set_if(p.report, f.report);
  set_if(p.results, f.results);
  set_if(p.out_dir, f.out);

  try {
    TrainConfig& t = f.stage == 1 ? c.stage1 : c.stage2;
    if (!f.annotation_mode.empty()) {
      t.annotation_mode = parse_annotation_mode(f.annotation_mode);
    }
    if (!f.optimizer.empty()) t.optimizer = parse_optimizer(f.optimizer);
    if (f.epochs_opt && f.epochs_opt->count()) t.epochs = f.epochs;
    if (f.lr_opt && f.lr_opt->count()) t.learning_rate = f.lr;
    if (f.batch_opt && f.batch_opt->count()) t.batch_size = f.batch_size;
    if (f.lambda_txt_opt && f.lambda_txt_opt->count()) {
      t.lambda_txt = f.lambda_txt;
    }
    if (f.lambda_info_opt && f.lambda_info_opt->count()) {
      t.lambda_info = f.lambda_info;
    }

    auto& a = c.annotation;
    if (f.mock) a.mock = true;
    set_if(a.generator_url, f.generator_url);
    if (!f.judge_urls.empty()) a.judge_urls = f.judge_urls;
    if (f.judges_opt && f.judges_opt->count()) a.judges = f.judges;
    if (f.mean_opt && f.mean_opt->count()) a.mean_threshold = f.mean_threshold;
    if (f.range_opt && f.range_opt->count()) a.max_range = f.max_range;

    if (!f.k_list.empty()) c.eval.k_list = f.k_list;
    if (!f.subset_k_list.empty()) c.eval.subset_k_list = f.subset_k_list;
    if (!f.map_k_list.empty()) c.eval.map_k_list = f.map_k_list;

    if (f.items_opt && f.items_opt->count()) c.synth.n_items = f.items;
    if (f.attrs_opt && f.attrs_opt->count()) c.synth.n_attrs = f.attrs;
    if (f.ntrip_opt && f.ntrip_opt->count()) c.synth.n_triplets = f.n_triplets;
    if (f.ntest_opt && f.ntest_opt->count()) c.synth.n_test = f.n_test;

    validate(c);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return c;
}

// ---- commands ------------------------------------------------------------

int cmd_synth(const RunConfig& c, std::ostream& out) {
  require_path(c.paths.out_dir, "--out");
  SynthOptions o;
  o.seed = c.seed;
  o.n_items = c.synth.n_items;
  o.n_attrs = c.synth.n_attrs;
  o.n_triplets = c.synth.n_triplets;
  o.noise = c.synth.noise;
  o.subset_size = c.synth.subset_size;
  o.vocab_size = c.model.vocab_size;
  o.image_dim = c.model.image_dim;
  const SynthWorld world = generate_synthetic_world(o);
  const auto [train, test] = split_holdout(world.triplets, c.synth.n_test);

  const fs::path dir(c.paths.out_dir);
  fs::create_directories(dir / "gallery");
  save_embeddings(world.embeddings, dir / "gallery");
  write_triplets(dir / "train.jsonl", train);
  write_triplets(dir / "test.jsonl", test);
  write_nli_pairs(dir / "nli.jsonl", world.nli_pairs);
  out << "synth: " << world.embeddings.count() << " items, "
      << train.size() << " train / " << test.size() << " test triplets, "
      << world.nli_pairs.size() << " text pairs -> " << dir.string() << "\n";
  return kExitOk;
}

int cmd_ingest(const RunConfig& c, std::ostream& out) {
  require_file(c.paths.embeddings, "--embeddings");
  require_file(c.paths.triplets, "--triplets");
  const EmbeddingMatrix gallery =
      load_embeddings(manifest_path(c.paths.embeddings));
  const auto triplets = load_triplets(c.paths.triplets);
  check_triplet_ids(gallery, triplets);
  std::size_t with_subset = 0, with_gt = 0;
  for (const auto& t : triplets) {
    with_subset += t.subset_ids ? 1 : 0;
    with_gt += t.gt_ids ? 1 : 0;
  }
  out << "ingest: " << gallery.count() << " items x " << gallery.dims()
      << " dims, " << triplets.size() << " triplets (" << with_subset
      << " with subsets, " << with_gt << " with ground-truth sets)\n";
  return kExitOk;
}

int cmd_annotate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require_file(c.paths.triplets, "--triplets");
  require_path(c.paths.annotations, "--out");
  const auto& a = c.annotation;
  if (!a.mock && (a.generator_url.empty() || a.judge_urls.empty())) {
    throw UsageError(
        "annotate needs --mock or both --generator-url and --judge-url");
  }
  const auto triplets = load_triplets(c.paths.triplets);

  std::unique_ptr<GeneratorClient> generator;
  std::vector<std::unique_ptr<JudgeClient>> owned;
  if (a.mock) {
    generator = std::make_unique<MockGenerator>(c.seed);
    for (std::size_t j = 0; j < a.judges; ++j) {
      owned.push_back(std::make_unique<MockJudge>(c.seed + 1 + j));
    }
  } else {
    generator = std::make_unique<RemoteGenerator>(
        RemoteOptions{a.generator_url, a.timeout_ms, a.retries});
    for (const auto& url : a.judge_urls) {
      owned.push_back(std::make_unique<RemoteJudge>(
          RemoteOptions{url, a.timeout_ms, a.retries}));
    }
  }
  std::vector<JudgeClient*> judges;
  for (auto& j : owned) judges.push_back(j.get());

  const AnnotationRun run = annotate_triplets(triplets, *generator, judges);
  ensure_parent(c.paths.annotations);
  write_annotations(c.paths.annotations, run.annotations);
  out << "annotate: " << run.annotations.size() << " of " << triplets.size()
      << " triplets annotated, " << run.unparseable.size()
      << " unparseable\n";
  for (const auto& id : run.unparseable) {
    err << "warning: unparseable generator output for " << id << "\n";
  }
  return kExitOk;
}

int cmd_filter(const RunConfig& c, std::ostream& out) {
  require_file(c.paths.annotations, "--annotations");
  require_path(c.paths.accepted, "--accepted");
  require_path(c.paths.rejected, "--rejected");
  const auto records = load_annotations(c.paths.annotations);
  const FilterResult r = filter_annotations(
      records, c.annotation.mean_threshold, c.annotation.max_range);
  ensure_parent(c.paths.accepted);
  ensure_parent(c.paths.rejected);
  write_annotations(c.paths.accepted, r.accepted);
  write_annotations(c.paths.rejected, r.rejected);
  const double rate =
      records.empty() ? 0.0
                      : 100.0 * static_cast<double>(r.accepted.size()) /
                            static_cast<double>(records.size());
  out << "filter: accepted " << r.accepted.size() << " of " << records.size()
      << " (" << percent(rate) << "%), rejected " << r.rejected.size()
      << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c, int stage, bool from_scratch,
              std::ostream& out) {
  if (stage != 1 && stage != 2) throw UsageError("--stage must be 1 or 2");
  require_path(c.paths.checkpoint, "--out");
  TrainConfig t = stage == 1 ? c.stage1 : c.stage2;
  t.stage = stage;
  t.seed = c.seed;

  // Check every input before any work starts.
  if (stage == 1) {
    require_file(c.paths.nli, "--nli");
  } else {
    require_file(c.paths.embeddings, "--embeddings");
    require_file(c.paths.triplets, "--triplets");
    require_file(c.paths.accepted, "--accepted");
    if (c.paths.init_checkpoint.empty() && !from_scratch) {
      throw Error(ErrorCode::kMissingFile,
                  "stage 2 needs a stage-1 checkpoint (--init) or "
                  "--from-scratch");
    }
  }
  if (!c.paths.init_checkpoint.empty()) {
    require_file(c.paths.init_checkpoint, "--init");
  }

  ParamSet init = c.paths.init_checkpoint.empty()
                      ? init_params(c.model, c.seed, t.tau)
                      : load_checkpoint(c.paths.init_checkpoint);

  std::ofstream log;
  if (!c.paths.loss_log.empty()) {
    ensure_parent(c.paths.loss_log);
    log.open(c.paths.loss_log, std::ios::trunc);
    if (!log) throw Error(ErrorCode::kIo, "cannot write " + c.paths.loss_log);
  }
  std::size_t steps = 0;
  LossBreakdown last;
  const LossCallback on_step = [&](const LossRecord& r) {
    ++steps;
    last = r.loss;
    if (log.is_open()) {
      nlohmann::ordered_json j;
      j["stage"] = r.stage;
      j["epoch"] = r.epoch;
      j["step"] = r.step;
      j["l_txt"] = r.loss.l_txt;
      j["l_info"] = r.loss.l_info;
      j["combined"] = r.loss.combined;
      log << j.dump() << "\n";
    }
  };

  ParamSet trained;
  std::size_t items = 0;
  if (stage == 1) {
    const auto pairs = load_nli_pairs(c.paths.nli);
    items = pairs.size();
    trained = train_stage1(init, pairs, t, on_step);
  } else {
    const EmbeddingMatrix gallery =
        load_embeddings(manifest_path(c.paths.embeddings));
    if (gallery.dims() != init.dims.image_dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "gallery has " + std::to_string(gallery.dims()) +
                      " dims, model expects " +
                      std::to_string(init.dims.image_dim));
    }
    const auto triplets = load_triplets(c.paths.triplets);
    check_triplet_ids(gallery, triplets);
    const auto accepted = load_annotations(c.paths.accepted);
    const auto examples = build_examples(gallery, triplets, accepted,
                                         t.annotation_mode,
                                         init.dims.vocab_size);
    items = examples.size();
    trained = train_stage2(init, examples, t, on_step);
  }
  ensure_parent(c.paths.checkpoint);
  save_checkpoint(trained, c.paths.checkpoint, {c.seed, stage});
  out << "train: stage " << stage << ", " << items << " items, " << steps
      << " steps, final l_txt " << last.l_txt << " l_info " << last.l_info
      << " -> " << c.paths.checkpoint << "\n";
  return kExitOk;
}

void print_report(const EvalReport& r, std::ostream& out) {
  out << "queries: " << r.query_count << "\n";
  for (const auto& [k, v] : r.recall) {
    out << "R@" << k << ": " << percent(v) << "\n";
  }
  for (const auto& [k, v] : r.subset_recall) {
    out << "R_subset@" << k << ": " << percent(v) << "\n";
  }
  for (const auto& [k, v] : r.map) {
    out << "mAP@" << k << ": " << percent(100.0 * v) << "\n";
  }
  if (r.has_cirr_average) {
    out << "Avg (R@5 + R_subset@1)/2: " << percent(r.cirr_avg) << "\n";
  }
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  require_file(c.paths.checkpoint, "--checkpoint");
  require_file(c.paths.embeddings, "--embeddings");
  require_file(c.paths.triplets, "--triplets");
  require_path(c.paths.report, "--report");
  const ParamSet p = load_checkpoint(c.paths.checkpoint);
  const EmbeddingMatrix gallery =
      load_embeddings(manifest_path(c.paths.embeddings));
  if (gallery.dims() != p.dims.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "gallery has " + std::to_string(gallery.dims()) +
                    " dims, checkpoint expects " +
                    std::to_string(p.dims.image_dim));
  }
  const auto triplets = load_triplets(c.paths.triplets);
  if (triplets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty query set");
  }
  check_triplet_ids(gallery, triplets);
  const Evaluation ev = evaluate_model(p, gallery, triplets, c.eval);
  write_text(c.paths.report, to_json(ev.report));
  if (!c.paths.results.empty()) {
    write_text(c.paths.results, results_to_jsonl(ev.results));
  }
  print_report(ev.report, out);
  return kExitOk;
}

int cmd_report(const RunConfig& c, std::ostream& out) {
  require_file(c.paths.report, "--report");
  print_report(report_from_json(read_text(c.paths.report)), out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"cirtool: composed image retrieval pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON config file");
  f.seed_opt = app.add_option("--seed", f.seed, "Seed for every random choice");
  app.add_flag("--print-config", f.print_config,
               "Print the resolved config as JSON and exit");

  auto* synth = app.add_subcommand("synth", "Write a synthetic world");
  synth->add_option("--out", f.out, "Output directory");
  f.items_opt = synth->add_option("--items", f.items, "Gallery size");
  f.attrs_opt = synth->add_option("--attrs", f.attrs, "Binary facets per item");
  f.ntrip_opt = synth->add_option("--triplets", f.n_triplets, "Triplet count");
  f.ntest_opt = synth->add_option("--test", f.n_test, "Held-out triplets");

  auto* ingest = app.add_subcommand("ingest", "Validate embeddings + triplets");
  ingest->add_option("--embeddings", f.embeddings, "manifest.json or its dir");
  ingest->add_option("--triplets", f.triplets, "Triplets JSONL");

  auto* annotate = app.add_subcommand("annotate", "Generate and judge CoT");
  annotate->add_option("--triplets", f.triplets, "Triplets JSONL");
  annotate->add_option("--out", f.annotations, "Annotations JSONL to write");
  annotate->add_flag("--mock", f.mock, "Use the built-in mock clients");
  annotate->add_option("--generator-url", f.generator_url, "Generator endpoint");
  annotate->add_option("--judge-url", f.judge_urls, "Judge endpoint (repeat)");
  f.judges_opt = annotate->add_option("--judges", f.judges, "Mock judge count");

  auto* filter = app.add_subcommand("filter", "Split annotations by judges");
  filter->add_option("--annotations", f.annotations, "Annotations JSONL");
  filter->add_option("--accepted", f.accepted, "Accepted JSONL to write");
  filter->add_option("--rejected", f.rejected, "Rejected JSONL to write");
  f.mean_opt = filter->add_option("--mean-threshold", f.mean_threshold,
                                  "Minimum mean judge score");
  f.range_opt = filter->add_option("--max-range", f.max_range,
                                   "Maximum judge disagreement");

  auto* train = app.add_subcommand("train", "Train stage 1 or stage 2");
  f.stage_opt = train->add_option("--stage", f.stage, "1 or 2")->required();
  train->add_option("--nli", f.nli, "Stage-1 text pairs JSONL");
  train->add_option("--embeddings", f.embeddings, "manifest.json or its dir");
  train->add_option("--triplets", f.triplets, "Training triplets JSONL");
  train->add_option("--accepted", f.accepted, "Accepted annotations JSONL");
  train->add_option("--init", f.init_checkpoint, "Starting checkpoint");
  train->add_flag("--from-scratch", f.from_scratch,
                  "Allow stage 2 without a stage-1 checkpoint");
  train->add_option("--out", f.checkpoint, "Checkpoint to write");
  train->add_option("--loss-log", f.loss_log, "Loss log JSONL to write");
  train->add_option("--annotation-mode", f.annotation_mode, "full or fast");
  train->add_option("--optimizer", f.optimizer, "adam or sgd");
  f.epochs_opt = train->add_option("--epochs", f.epochs, "Epochs");
  f.lr_opt = train->add_option("--lr", f.lr, "Learning rate");
  f.batch_opt = train->add_option("--batch-size", f.batch_size, "Batch size");
  f.lambda_txt_opt =
      train->add_option("--lambda-txt", f.lambda_txt, "Text-loss weight");
  f.lambda_info_opt =
      train->add_option("--lambda-info", f.lambda_info, "InfoNCE weight");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--embeddings", f.embeddings, "manifest.json or its dir");
  eval->add_option("--triplets", f.triplets, "Query triplets JSONL");
  eval->add_option("--report", f.report, "Report JSON to write");
  eval->add_option("--results", f.results, "Ranked results JSONL to write");
  eval->add_option("--k-list", f.k_list, "Recall@K values, e.g. 1,5,10")
      ->delimiter(',');
  eval->add_option("--subset-k-list", f.subset_k_list, "R_subset@K values")
      ->delimiter(',');
  eval->add_option("--map-k-list", f.map_k_list, "mAP@k values")
      ->delimiter(',');

  auto* report = app.add_subcommand("report", "Print a saved report");
  report->add_option("--report", f.report, "Report JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    err << "run 'cirtool --help' for usage\n";
    return kExitUsage;
  }

  try {
    const RunConfig c = resolve_config(f);
    if (f.print_config) {
      out << to_json(c).dump(2) << "\n";
      return kExitOk;
    }
    if (synth->parsed()) return cmd_synth(c, out);
    if (ingest->parsed()) return cmd_ingest(c, out);
    if (annotate->parsed()) return cmd_annotate(c, out, err);
    if (filter->parsed()) return cmd_filter(c, out);
    if (train->parsed()) return cmd_train(c, f.stage, f.from_scratch, out);
    if (eval->parsed()) return cmd_eval(c, out);
    if (report->parsed()) return cmd_report(c, out);
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error [" << error_code_name(e.code()) << "]: " << e.what()
        << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace cir::cli
