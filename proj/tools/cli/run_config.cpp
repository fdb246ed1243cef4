#include "cli/run_config.hpp"

#include <functional>
#include <map>

#include "cir/error.hpp"

namespace cir::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using Setter = std::function<void(const json&)>;

void apply_fields(const json& j, const std::string& where,
                  const std::map<std::string, Setter>& fields) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidArgument,
                "config: '" + where + "' must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "config: unknown key '" + where + "." + key + "'");
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  "config: bad value for '" + where + "." + key +
                      "': " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

ordered_json train_to_json(const TrainConfig& t) {
  ordered_json j;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["lambda_txt"] = t.lambda_txt;
  j["lambda_info"] = t.lambda_info;
  j["tau"] = t.tau;
  j["optimizer"] = std::string(to_string(t.optimizer));
  j["momentum"] = t.momentum;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_epsilon"] = t.adam_epsilon;
  j["annotation_mode"] = std::string(to_string(t.annotation_mode));
  return j;
}

void apply_train(TrainConfig& t, const json& j, const std::string& where) {
  apply_fields(
      j, where,
      {{"learning_rate", set(t.learning_rate)},
       {"batch_size", set(t.batch_size)},
       {"epochs", set(t.epochs)},
       {"lambda_txt", set(t.lambda_txt)},
       {"lambda_info", set(t.lambda_info)},
       {"tau", set(t.tau)},
       {"optimizer",
        [&t](const json& v) {
          t.optimizer = parse_optimizer(v.get<std::string>());
        }},
       {"momentum", set(t.momentum)},
       {"beta1", set(t.beta1)},
       {"beta2", set(t.beta2)},
       {"adam_epsilon", set(t.adam_epsilon)},
       {"annotation_mode", [&t](const json& v) {
          t.annotation_mode = parse_annotation_mode(v.get<std::string>());
        }}});
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;

  const auto& p = c.paths;
  ordered_json paths;
  paths["embeddings"] = p.embeddings;
  paths["triplets"] = p.triplets;
  paths["nli"] = p.nli;
  paths["annotations"] = p.annotations;
  paths["accepted"] = p.accepted;
  paths["rejected"] = p.rejected;
  paths["checkpoint"] = p.checkpoint;
  paths["init_checkpoint"] = p.init_checkpoint;
  paths["loss_log"] = p.loss_log;
  paths["report"] = p.report;
  paths["results"] = p.results;
  paths["out_dir"] = p.out_dir;
  j["paths"] = paths;

  ordered_json model;
  model["vocab_size"] = c.model.vocab_size;
  model["token_dim"] = c.model.token_dim;
  model["image_dim"] = c.model.image_dim;
  model["embed_dim"] = c.model.embed_dim;
  model["hidden_dim"] = c.model.hidden_dim;
  j["model"] = model;

  j["stage1"] = train_to_json(c.stage1);
  j["stage2"] = train_to_json(c.stage2);

  const auto& a = c.annotation;
  ordered_json ann;
  ann["mean_threshold"] = a.mean_threshold;
  ann["max_range"] = a.max_range;
  ann["judges"] = a.judges;
  ann["mock"] = a.mock;
  ann["generator_url"] = a.generator_url;
  ann["judge_urls"] = a.judge_urls;
  ann["timeout_ms"] = a.timeout_ms;
  ann["retries"] = a.retries;
  j["annotation"] = ann;

  ordered_json ev;
  ev["k_list"] = c.eval.k_list;
  ev["subset_k_list"] = c.eval.subset_k_list;
  ev["map_k_list"] = c.eval.map_k_list;
  j["eval"] = ev;

  ordered_json syn;
  syn["n_items"] = c.synth.n_items;
  syn["n_attrs"] = c.synth.n_attrs;
  syn["n_triplets"] = c.synth.n_triplets;
  syn["n_test"] = c.synth.n_test;
  syn["noise"] = c.synth.noise;
  syn["subset_size"] = c.synth.subset_size;
  j["synth"] = syn;
  return j;
}

void apply_json(RunConfig& c, const json& j) {
  auto& p = c.paths;
  auto& a = c.annotation;
  apply_fields(
      j, "config",
      {{"seed", set(c.seed)},
       {"paths",
        [&](const json& v) {
          apply_fields(v, "paths",
                       {{"embeddings", set(p.embeddings)},
                        {"triplets", set(p.triplets)},
                        {"nli", set(p.nli)},
                        {"annotations", set(p.annotations)},
                        {"accepted", set(p.accepted)},
                        {"rejected", set(p.rejected)},
                        {"checkpoint", set(p.checkpoint)},
                        {"init_checkpoint", set(p.init_checkpoint)},
                        {"loss_log", set(p.loss_log)},
                        {"report", set(p.report)},
                        {"results", set(p.results)},
                        {"out_dir", set(p.out_dir)}});
        }},
       {"model",
        [&](const json& v) {
          apply_fields(v, "model",
                       {{"vocab_size", set(c.model.vocab_size)},
                        {"token_dim", set(c.model.token_dim)},
                        {"image_dim", set(c.model.image_dim)},
                        {"embed_dim", set(c.model.embed_dim)},
                        {"hidden_dim", set(c.model.hidden_dim)}});
        }},
       {"stage1", [&](const json& v) { apply_train(c.stage1, v, "stage1"); }},
       {"stage2", [&](const json& v) { apply_train(c.stage2, v, "stage2"); }},
       {"annotation",
        [&](const json& v) {
          apply_fields(v, "annotation",
                       {{"mean_threshold", set(a.mean_threshold)},
                        {"max_range", set(a.max_range)},
                        {"judges", set(a.judges)},
                        {"mock", set(a.mock)},
                        {"generator_url", set(a.generator_url)},
                        {"judge_urls", set(a.judge_urls)},
                        {"timeout_ms", set(a.timeout_ms)},
                        {"retries", set(a.retries)}});
        }},
       {"eval",
        [&](const json& v) {
          apply_fields(v, "eval",
                       {{"k_list", set(c.eval.k_list)},
                        {"subset_k_list", set(c.eval.subset_k_list)},
                        {"map_k_list", set(c.eval.map_k_list)}});
        }},
       {"synth", [&](const json& v) {
          apply_fields(v, "synth",
                       {{"n_items", set(c.synth.n_items)},
                        {"n_attrs", set(c.synth.n_attrs)},
                        {"n_triplets", set(c.synth.n_triplets)},
                        {"n_test", set(c.synth.n_test)},
                        {"noise", set(c.synth.noise)},
                        {"subset_size", set(c.synth.subset_size)}});
        }}});
}

void validate(const RunConfig& c) {
  validate(c.stage1);
  validate(c.stage2);
  validate(c.eval);
  const auto& a = c.annotation;
  if (!(a.mean_threshold >= 1.0 && a.mean_threshold <= 5.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "annotation.mean_threshold must be in [1, 5]");
  }
  if (a.max_range < 0 || a.max_range > 4) {
    throw Error(ErrorCode::kInvalidArgument,
                "annotation.max_range must be in [0, 4]");
  }
  if (a.judges == 0) {
    throw Error(ErrorCode::kInvalidArgument, "annotation.judges must be >= 1");
  }
  if (a.timeout_ms <= 0 || a.retries < 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "annotation.timeout_ms must be positive, retries >= 0");
  }
  const auto& m = c.model;
  if (m.vocab_size < 2 || m.token_dim == 0 || m.image_dim == 0 ||
      m.embed_dim == 0 || m.hidden_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "model dims must be positive");
  }
}

}  // namespace cir::cli
