#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "unimc/model/transformer.hpp"
#include "unimc/training/examples.hpp"

namespace unimc::training {

using numerics::Graph;
using numerics::Var;

/// Homogeneous list of examples of one subtask. Examples are run one graph
/// each, so there is no padding to mask.
struct Batch {
  Task kind = Task::CS;
  std::vector<const SubtaskExample*> examples;

  bool empty() const noexcept { return examples.empty(); }
  std::size_t size() const noexcept { return examples.size(); }
};

struct TaskLoss {
  double value = 0;
  double nll = 0;        // token-mean NLL of the target sequence
  double relevance = 0;  // mean relevance cross-entropy
  std::size_t tokens = 0;
  bool empty = true;
};

struct JointLoss {
  double total = 0;
  TaskLoss cs, mr, mag;

  const TaskLoss& operator[](Task t) const { return t == Task::CS ? cs : t == Task::MR ? mr : mag; }
  TaskLoss& operator[](Task t) { return t == Task::CS ? cs : t == Task::MR ? mr : mag; }
};

/// Labels for teacher forcing: the target followed by EOS.
inline std::vector<int> next_token_labels(std::span<const TokenId> target) {
  std::vector<int> out(target.begin(), target.end());
  out.push_back(model::id(model::SpecialToken::EOS));
  return out;
}

/// Graph nodes of one example's loss terms.
struct ExampleTerms {
  std::optional<Var> nll;        // mean over target tokens + EOS
  std::optional<Var> relevance;  // cross-entropy of z
  std::size_t tokens = 0;
};

template <class T>
ExampleTerms example_terms(Graph<T>& g, const model::Model<T>& m, const SubtaskExample& ex) {
  const auto& cfg = m.config();
  const bool with_rel = cfg.relevance != model::RelevanceMode::NONE;
  ExampleTerms out;
  if (ex.kind == Task::MR && !with_rel) return out;

  Var fused = m.encode_inputs(g, ex.context, ex.memories, ex.kind == Task::CS);
  const auto input = model::decoder_input(cfg.relevance, ex.kind, ex.target);
  Var hidden = m.decode(g, fused, input);
  if (with_rel) {
    const int z = ex.z;
    out.relevance = g.cross_entropy(m.relevance_logits(g, g.slice_rows(hidden, 0, 1)), std::span<const int>(&z, 1));
  }
  if (ex.kind != Task::MR) {
    const std::size_t first = model::task_position(cfg.relevance);
    const auto labels = next_token_labels(ex.target);
    Var rows = g.slice_rows(hidden, first, g.rows(hidden));
    out.nll = g.cross_entropy(m.lm_logits(g, rows), labels);
    out.tokens = labels.size();
  }
  return out;
}

/// Loss of one batch. With `accumulate` every example's weighted loss is
/// back-propagated into the parameter gradients; the summed value equals the
/// batch loss: token-mean NLL over the batch plus mean relevance CE.
template <class T>
TaskLoss batch_loss(const model::Model<T>& m, const Batch& batch, bool accumulate) {
  TaskLoss out;
  if (batch.empty()) return out;
  const bool with_rel = m.config().relevance != model::RelevanceMode::NONE;
  if (batch.kind == Task::MR && !with_rel) return out;
  out.empty = false;

  std::size_t total_tokens = 0;
  if (batch.kind != Task::MR)
    for (const auto* ex : batch.examples) total_tokens += ex->target.size() + 1;
  out.tokens = total_tokens;

  for (const auto* ex : batch.examples) {
    if (ex->kind != batch.kind) throw Error("batch_loss: mixed subtasks in one batch");
    try {
      Graph<T> g;
      const auto terms = example_terms(g, m, *ex);
      std::vector<Var> parts;
      if (terms.nll) {
        const T w = T(terms.tokens) / T(total_tokens);
        out.nll += double(g.value(*terms.nll)[0]) * double(w);
        parts.push_back(g.scale(*terms.nll, w));
      }
      if (terms.relevance) {
        const T w = T(1) / T(batch.size());
        out.relevance += double(g.value(*terms.relevance)[0]) * double(w);
        parts.push_back(g.scale(*terms.relevance, w));
      }
      if (parts.empty() || !accumulate) continue;
      g.backward(parts.size() == 1 ? parts[0] : g.add(parts[0], parts[1]));
    } catch (const NumericError& e) {
      throw NumericError(detail::concat(e.what(), " (", model::to_string(ex->kind), " example, dialogue ",
                                        ex->dialogue, ", turn ", ex->turn, ")"));
    }
  }
  out.value = out.nll + out.relevance;
  return out;
}

/// L = L_cs + L_mr + L_mag, unweighted.
inline double combine(double cs, double mr, double mag) { return cs + mr + mag; }

/// Joint loss over one batch per subtask. Empty batches contribute 0 and are
/// flagged; without a relevance head the classification terms are absent.
/// With `accumulate` the gradients of L are added into the parameters.
template <class T>
JointLoss joint_loss(const model::Model<T>& m, const Batch& cs, const Batch& mr, const Batch& mag,
                     bool accumulate = false) {
  JointLoss out;
  out.cs = batch_loss(m, cs, accumulate);
  out.mr = batch_loss(m, mr, accumulate);
  out.mag = batch_loss(m, mag, accumulate);
  out.total = combine(out.cs.value, out.mr.value, out.mag.value);
  if (!std::isfinite(out.total)) {
    throw NumericError(detail::concat("joint loss is not finite: L_cs=", out.cs.value, " L_mr=", out.mr.value,
                                      " L_mag=", out.mag.value));
  }
  return out;
}

}  // namespace unimc::training
