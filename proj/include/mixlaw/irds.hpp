#pragma once

#include <cstdint>
#include <vector>

#include "mixlaw/core.hpp"
#include "mixlaw/game.hpp"

namespace mixlaw {

// Synthetic multilingual classification data. Every language labels inputs
// x ~ N(0, I) with its own linear teacher; teacher i mixes shared random
// bases with weights transfer_structure(i, :), so languages whose rows
// overlap have similar decision rules.
struct SyntheticCorpusConfig {
  LanguageSet languages;
  int num_classes = 4;
  int feature_dim = 16;
  Matrix transfer_structure;  // K x K, non-negative, diagonal is the row max
  int train_examples = 2000;  // per language
  int validation_examples = 500;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct LanguageData {
  Matrix train_x;  // one example per row
  std::vector<int> train_y;
  Matrix val_x;
  std::vector<int> val_y;
};

struct SyntheticCorpus {
  LanguageSet languages;
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<LanguageData> data;  // language order
};

SyntheticCorpus GenerateCorpus(const SyntheticCorpusConfig& config);

// One tanh hidden layer followed by a softmax classifier.
struct ModelConfig {
  int hidden = 16;
  double init_scale = 1.0;

  int ParameterCount(int feature_dim, int num_classes) const;
};

enum class ScheduleKind { kConstant, kCosine };

struct Schedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double eta = 0.01;
  double eta_min = 0.0;
  int steps = 200;

  double At(int step) const;
};

struct TrainConfig {
  ModelConfig model;
  Schedule schedule;
  int batch_size = 24;
  std::uint64_t seed = 0;
  // Examples per language in every batch of the full run; empty means the
  // batch is split uniformly. A zero keeps a language out of training.
  std::vector<int> language_slots;
  bool keep_checkpoints = false;
};

struct TrainerState {
  int step = 0;
  Vector params;
};

// Running sums of eta_t * <validation gradient of j, training gradient of i>.
struct IrdsAccumulator {
  LanguageSet languages;
  Matrix sums;  // sources x targets
  int steps = 0;
  std::vector<std::vector<int>> batch_counts;  // examples per language, per step
};

struct IrdsRun {
  TrainerState state;
  IrdsAccumulator accumulator;
  std::vector<Vector> checkpoints;  // w_0 .. w_T when requested
};

// Example indices each language contributes to one step's batch.
struct StepBatch {
  std::vector<std::vector<int>> indices;
};

// Uniform slot assignment: slot k goes to the k-th member of `members`
// modulo its size.
std::vector<int> UniformSlots(int batch_size, Coalition members, int num_languages);

// Batch of step `step` for a run keyed by `stream` (the coalition mask of
// the run) with per-language example counts `slots`.
StepBatch BatchForStep(const SyntheticCorpus& corpus, std::uint64_t seed, Coalition stream,
                       const std::vector<int>& slots, int step);

TrainerState InitialState(const SyntheticCorpus& corpus, const TrainConfig& config);

// Mean cross-entropy on the validation set of `target`.
double ValidationLoss(const SyntheticCorpus& corpus, const ModelConfig& model, const Vector& params,
                      int target);
Vector ValidationGradient(const SyntheticCorpus& corpus, const ModelConfig& model, const Vector& params,
                          int target);
// Summed training gradient over the given examples of `language`.
Vector TrainingGradient(const SyntheticCorpus& corpus, const ModelConfig& model, const Vector& params,
                        int language, const std::vector<int>& indices);

// Full-batch SGD from w_0 over schedule.steps steps with IRDS accumulation.
IrdsRun TrainWithIrds(const SyntheticCorpus& corpus, const TrainConfig& config);

// Continues `start` up to `end_step`; the returned accumulator only covers
// [start.step, end_step).
IrdsRun ContinueWithIrds(const SyntheticCorpus& corpus, const TrainConfig& config, TrainerState start,
                         int end_step);

// u_j(S) = l_j(w) - l_j(w - lr * sum_{r in S} g_r) for the batch at `state`.
double LocalPayoff(const SyntheticCorpus& corpus, const ModelConfig& model, const TrainerState& state,
                   const StepBatch& batch, Coalition coalition, int target, double lr);

ShapleyMatrix IrdsToShapley(const IrdsAccumulator& accumulator);

struct SvSimilarity {
  double cosine = 0.0;
  double pearson = 0.0;
};

SvSimilarity CompareSv(const ShapleyMatrix& a, const ShapleyMatrix& b, bool exclude_diagonal = false);

// kFixedBudget: every coalition trains for the same steps and batch size,
// drawing uniformly from its members. kDataScaled: members keep the batch
// share they have in the full run, so smaller coalitions see less data.
enum class CoalitionConvention { kFixedBudget, kDataScaled };

// Trains one model per non-empty coalition (in parallel) and returns the
// game with v_j(S) = l_j(w_0) - l_j(w_T(S)).
CoalitionGame ExactCoalitionPayoffs(const SyntheticCorpus& corpus, const TrainConfig& config,
                                    CoalitionConvention convention = CoalitionConvention::kFixedBudget,
                                    int enumeration_cap = 16);

}  // namespace mixlaw
