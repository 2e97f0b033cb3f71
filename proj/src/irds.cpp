#include "mixlaw/irds.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <memory>
#include <numbers>
#include <random>
#include <thread>

namespace mixlaw {

namespace {

constexpr int kMaxParameters = 100000;

// Views of the flat parameter vector: W1 (H x d), b1 (H), W2 (C x H), b2 (C).
struct Layout {
  int hidden;
  int dim;
  int classes;

  int size() const { return hidden * dim + hidden + classes * hidden + classes; }
  Eigen::Map<const Matrix> W1(const Vector& p) const { return {p.data(), hidden, dim}; }
  Eigen::Map<const Vector> b1(const Vector& p) const { return {p.data() + hidden * dim, hidden}; }
  Eigen::Map<const Matrix> W2(const Vector& p) const {
    return {p.data() + hidden * dim + hidden, classes, hidden};
  }
  Eigen::Map<const Vector> b2(const Vector& p) const {
    return {p.data() + hidden * dim + hidden + classes * hidden, classes};
  }
};

Layout LayoutOf(const SyntheticCorpus& corpus, const ModelConfig& model) {
  return {model.hidden, corpus.feature_dim, corpus.num_classes};
}

// Summed cross-entropy over the rows of x, and optionally its gradient.
double LossAndGradient(const Layout& layout, const Vector& params, const Matrix& x,
                       const std::vector<int>& y, Vector* gradient) {
  const auto W1 = layout.W1(params);
  const auto W2 = layout.W2(params);
  Matrix act = (x * W1.transpose()).rowwise() + layout.b1(params).transpose();
  act = act.array().tanh().matrix();
  Matrix logits = (act * W2.transpose()).rowwise() + layout.b2(params).transpose();

  double loss = 0.0;
  Matrix dlogits(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(r).array() - m).exp().matrix();
    const double z = e.sum();
    loss += m + std::log(z) - logits(r, y[r]);
    dlogits.row(r) = e / z;
    dlogits(r, y[r]) -= 1.0;
  }
  if (gradient != nullptr) {
    gradient->resize(layout.size());
    const Matrix dact = ((dlogits * W2).array() * (1.0 - act.array().square())).matrix();
    const int h = layout.hidden;
    const int d = layout.dim;
    const int c = layout.classes;
    Eigen::Map<Matrix>(gradient->data(), h, d) = dact.transpose() * x;
    gradient->segment(h * d, h) = dact.colwise().sum().transpose();
    Eigen::Map<Matrix>(gradient->data() + h * d + h, c, h) = dlogits.transpose() * act;
    gradient->segment(h * d + h + c * h, c) = dlogits.colwise().sum().transpose();
  }
  return loss;
}

void CheckLanguage(const SyntheticCorpus& corpus, int language) {
  if (language < 0 || language >= corpus.languages.size()) {
    throw Error(ErrorCode::kInvalidArgument, "language index out of range");
  }
}

void ValidateRun(const SyntheticCorpus& corpus, const TrainConfig& config) {
  const int k = corpus.languages.size();
  if (static_cast<int>(corpus.data.size()) != k) {
    throw Error(ErrorCode::kShapeMismatch, "corpus data does not match its languages");
  }
  if (config.batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be positive");
  if (config.schedule.steps < 0) throw Error(ErrorCode::kInvalidArgument, "step count must be non-negative");
  if (!(config.schedule.eta > 0.0) || config.schedule.eta_min < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "learning rates must be positive");
  }
  if (!config.language_slots.empty()) {
    if (static_cast<int>(config.language_slots.size()) != k) {
      throw Error(ErrorCode::kShapeMismatch, "one slot count per language required");
    }
    for (int s : config.language_slots) {
      if (s < 0) throw Error(ErrorCode::kInvalidArgument, "slot counts must be non-negative");
    }
  }
  for (const auto& lang : corpus.data) {
    if (lang.train_x.rows() == 0 || lang.val_x.rows() == 0) {
      throw Error(ErrorCode::kEmptyInput, "every language needs training and validation examples");
    }
  }
}

std::vector<int> FullRunSlots(const SyntheticCorpus& corpus, const TrainConfig& config) {
  const int k = corpus.languages.size();
  return config.language_slots.empty() ? UniformSlots(config.batch_size, FullCoalition(k), k)
                                       : config.language_slots;
}

// Plain SGD on the summed batch gradient from `state` up to `end_step`.
// With `acc`, also accumulates the per-step first-order contributions.
void Train(const SyntheticCorpus& corpus, const TrainConfig& config, Coalition stream,
           const std::vector<int>& slots, TrainerState& state, int end_step, IrdsAccumulator* acc,
           std::vector<Vector>* checkpoints) {
  const int k = corpus.languages.size();
  const ModelConfig& model = config.model;
  if (checkpoints != nullptr) checkpoints->push_back(state.params);
  std::vector<Vector> val_grads(k);
  std::vector<Vector> grads(k);
  for (; state.step < end_step; ++state.step) {
    const int t = state.step;
    const double eta = config.schedule.At(t);
    const StepBatch batch = BatchForStep(corpus, config.seed, stream, slots, t);
    Vector total = Vector::Zero(state.params.size());
    for (int i = 0; i < k; ++i) {
      if (batch.indices[i].empty()) {
        grads[i] = Vector::Zero(state.params.size());
        continue;
      }
      grads[i] = TrainingGradient(corpus, model, state.params, i, batch.indices[i]);
      total += grads[i];
    }
    if (acc != nullptr) {
      std::vector<int> counts(k);
      for (int j = 0; j < k; ++j) {
        val_grads[j] = ValidationGradient(corpus, model, state.params, j);
        counts[j] = static_cast<int>(batch.indices[j].size());
      }
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) acc->sums(i, j) += eta * val_grads[j].dot(grads[i]);
      }
      acc->batch_counts.push_back(std::move(counts));
      ++acc->steps;
    }
    state.params -= eta * total;
    if (!state.params.allFinite()) {
      throw Error(ErrorCode::kNumericOverflow, "parameters diverged at step " + std::to_string(t));
    }
    if (checkpoints != nullptr) checkpoints->push_back(state.params);
  }
  if (acc != nullptr && !acc->sums.allFinite()) {
    throw Error(ErrorCode::kNumericOverflow, "accumulator overflowed before step " + std::to_string(end_step));
  }
}

}  // namespace

void SyntheticCorpusConfig::Validate() const {
  const int k = languages.size();
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "corpus needs at least one language");
  if (transfer_structure.rows() != k || transfer_structure.cols() != k) {
    throw Error(ErrorCode::kShapeMismatch, "transfer structure must be K x K");
  }
  if (num_classes < 2 || feature_dim < 1 || train_examples < 1 || validation_examples < 1) {
    throw Error(ErrorCode::kInvalidArgument, "corpus sizes must be positive with at least two classes");
  }
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double v = transfer_structure(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        throw Error(ErrorCode::kInvalidArgument, "transfer structure entries must be non-negative");
      }
    }
    if (!(transfer_structure(i, i) > 0.0) || transfer_structure(i, i) < transfer_structure.row(i).maxCoeff()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "diagonal of the transfer structure must be the positive row maximum");
    }
  }
}

SyntheticCorpus GenerateCorpus(const SyntheticCorpusConfig& config) {
  config.Validate();
  const int k = config.languages.size();
  const int d = config.feature_dim;
  const int c = config.num_classes;
  std::normal_distribution<double> normal(0.0, 1.0);

  std::mt19937_64 base_rng(MixSeed(config.seed, 0));
  std::vector<Matrix> bases(k, Matrix(d, c));
  for (auto& basis : bases) {
    for (Eigen::Index col = 0; col < c; ++col) {
      for (Eigen::Index row = 0; row < d; ++row) basis(row, col) = normal(base_rng);
    }
  }

  SyntheticCorpus corpus{config.languages, c, d, {}};
  for (int i = 0; i < k; ++i) {
    Matrix teacher = Matrix::Zero(d, c);
    for (int b = 0; b < k; ++b) teacher += config.transfer_structure(i, b) * bases[b];
    teacher /= teacher.norm();

    std::mt19937_64 rng(MixSeed(config.seed, static_cast<std::uint64_t>(i) + 1));
    auto draw = [&](int n, Matrix& x, std::vector<int>& y) {
      x.resize(n, d);
      y.resize(n);
      for (int r = 0; r < n; ++r) {
        for (int col = 0; col < d; ++col) x(r, col) = normal(rng);
        Eigen::Index label = 0;
        (x.row(r) * teacher).maxCoeff(&label);
        y[r] = static_cast<int>(label);
      }
    };
    LanguageData lang;
    draw(config.train_examples, lang.train_x, lang.train_y);
    draw(config.validation_examples, lang.val_x, lang.val_y);
    corpus.data.push_back(std::move(lang));
  }
  return corpus;
}

int ModelConfig::ParameterCount(int feature_dim, int num_classes) const {
  return hidden * feature_dim + hidden + num_classes * hidden + num_classes;
}

double Schedule::At(int step) const {
  if (kind == ScheduleKind::kConstant || steps <= 0) return eta;
  const double progress = static_cast<double>(step) / steps;
  return eta_min + 0.5 * (eta - eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<int> UniformSlots(int batch_size, Coalition members, int num_languages) {
  std::vector<int> ids;
  for (int i = 0; i < num_languages; ++i) {
    if (Contains(members, i)) ids.push_back(i);
  }
  std::vector<int> slots(num_languages, 0);
  if (ids.empty()) return slots;
  for (int s = 0; s < batch_size; ++s) ++slots[ids[s % ids.size()]];
  return slots;
}

StepBatch BatchForStep(const SyntheticCorpus& corpus, std::uint64_t seed, Coalition stream,
                       const std::vector<int>& slots, int step) {
  const int k = corpus.languages.size();
  if (static_cast<int>(slots.size()) != k) throw Error(ErrorCode::kShapeMismatch, "one slot count per language");
  const std::uint64_t key = MixSeed(MixSeed(seed, stream), static_cast<std::uint64_t>(step));
  StepBatch batch;
  batch.indices.resize(k);
  for (int i = 0; i < k; ++i) {
    const auto n = static_cast<std::uint64_t>(corpus.data[i].train_x.rows());
    const std::uint64_t lang_key = MixSeed(key, static_cast<std::uint64_t>(i));
    for (int r = 0; r < slots[i]; ++r) {
      batch.indices[i].push_back(static_cast<int>(MixSeed(lang_key, static_cast<std::uint64_t>(r)) % n));
    }
  }
  return batch;
}

TrainerState InitialState(const SyntheticCorpus& corpus, const TrainConfig& config) {
  const Layout layout = LayoutOf(corpus, config.model);
  if (config.model.hidden < 1) throw Error(ErrorCode::kInvalidArgument, "hidden width must be positive");
  if (layout.size() > kMaxParameters) {
    throw Error(ErrorCode::kInvalidArgument, "toy model exceeds " + std::to_string(kMaxParameters) + " parameters");
  }
  std::mt19937_64 rng(MixSeed(config.seed, 0x5eed));
  std::normal_distribution<double> normal(0.0, 1.0);
  TrainerState state{0, Vector::Zero(layout.size())};
  const double s1 = config.model.init_scale / std::sqrt(static_cast<double>(layout.dim));
  const double s2 = config.model.init_scale / std::sqrt(static_cast<double>(layout.hidden));
  const int w1 = layout.hidden * layout.dim;
  for (int i = 0; i < w1; ++i) state.params(i) = s1 * normal(rng);
  const int w2_begin = w1 + layout.hidden;
  for (int i = 0; i < layout.classes * layout.hidden; ++i) state.params(w2_begin + i) = s2 * normal(rng);
  return state;
}

double ValidationLoss(const SyntheticCorpus& corpus, const ModelConfig& model, const Vector& params,
                      int target) {
  CheckLanguage(corpus, target);
  const LanguageData& lang = corpus.data[target];
  return LossAndGradient(LayoutOf(corpus, model), params, lang.val_x, lang.val_y, nullptr) /
         static_cast<double>(lang.val_x.rows());
}

Vector ValidationGradient(const SyntheticCorpus& corpus, const ModelConfig& model, const Vector& params,
                          int target) {
  CheckLanguage(corpus, target);
  const LanguageData& lang = corpus.data[target];
  Vector g;
  LossAndGradient(LayoutOf(corpus, model), params, lang.val_x, lang.val_y, &g);
  return g / static_cast<double>(lang.val_x.rows());
}

Vector TrainingGradient(const SyntheticCorpus& corpus, const ModelConfig& model, const Vector& params,
                        int language, const std::vector<int>& indices) {
  CheckLanguage(corpus, language);
  const LanguageData& lang = corpus.data[language];
  Matrix x(static_cast<Eigen::Index>(indices.size()), corpus.feature_dim);
  std::vector<int> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = lang.train_x.row(indices[r]);
    y[r] = lang.train_y[indices[r]];
  }
  Vector g;
  LossAndGradient(LayoutOf(corpus, model), params, x, y, &g);
  return g;
}

IrdsRun TrainWithIrds(const SyntheticCorpus& corpus, const TrainConfig& config) {
  return ContinueWithIrds(corpus, config, InitialState(corpus, config), config.schedule.steps);
}

IrdsRun ContinueWithIrds(const SyntheticCorpus& corpus, const TrainConfig& config, TrainerState start,
                         int end_step) {
  ValidateRun(corpus, config);
  const int k = corpus.languages.size();
  if (start.params.size() != LayoutOf(corpus, config.model).size()) {
    throw Error(ErrorCode::kShapeMismatch, "trainer state does not match the model");
  }
  if (end_step < start.step) throw Error(ErrorCode::kInvalidArgument, "end step precedes the current step");
  IrdsRun run{std::move(start), {corpus.languages, Matrix::Zero(k, k), 0, {}}, {}};
  Train(corpus, config, FullCoalition(k), FullRunSlots(corpus, config), run.state, end_step, &run.accumulator,
        config.keep_checkpoints ? &run.checkpoints : nullptr);
  return run;
}

double LocalPayoff(const SyntheticCorpus& corpus, const ModelConfig& model, const TrainerState& state,
                   const StepBatch& batch, Coalition coalition, int target, double lr) {
  if (coalition == 0) return 0.0;
  const int k = corpus.languages.size();
  if (static_cast<int>(batch.indices.size()) != k) throw Error(ErrorCode::kShapeMismatch, "batch has wrong languages");
  Vector update = Vector::Zero(state.params.size());
  for (int r = 0; r < k; ++r) {
    if (Contains(coalition, r) && !batch.indices[r].empty()) {
      update += TrainingGradient(corpus, model, state.params, r, batch.indices[r]);
    }
  }
  const Vector moved = state.params - lr * update;
  return ValidationLoss(corpus, model, state.params, target) - ValidationLoss(corpus, model, moved, target);
}

ShapleyMatrix IrdsToShapley(const IrdsAccumulator& accumulator) {
  return {accumulator.languages, accumulator.languages, accumulator.sums,
          accumulator.sums.colwise().sum().transpose(), Matrix()};
}

SvSimilarity CompareSv(const ShapleyMatrix& a, const ShapleyMatrix& b, bool exclude_diagonal) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols() || !(a.players == b.players) ||
      !(a.targets == b.targets)) {
    throw Error(ErrorCode::kShapeMismatch, "Shapley matrices differ in shape or language order");
  }
  if (exclude_diagonal && !(a.players == a.targets)) {
    throw Error(ErrorCode::kShapeMismatch, "diagonal exclusion needs players equal to targets");
  }
  std::vector<double> x;
  std::vector<double> y;
  for (Eigen::Index j = 0; j < a.values.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.values.rows(); ++i) {
      if (exclude_diagonal && i == j) continue;
      x.push_back(a.values(i, j));
      y.push_back(b.values(i, j));
    }
  }
  if (x.empty()) throw Error(ErrorCode::kEmptyInput, "no entries to compare");
  const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::Map<const Vector> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  const double norms = xv.norm() * yv.norm();
  if (!(norms > 0.0)) throw Error(ErrorCode::kZeroVariance, "cosine undefined for a zero matrix");
  const Vector xc = xv.array() - xv.mean();
  const Vector yc = yv.array() - yv.mean();
  const double spread = xc.norm() * yc.norm();
  if (!(spread > 0.0)) throw Error(ErrorCode::kZeroVariance, "Pearson correlation undefined for constant entries");
  return {xv.dot(yv) / norms, xc.dot(yc) / spread};
}

CoalitionGame ExactCoalitionPayoffs(const SyntheticCorpus& corpus, const TrainConfig& config,
                                    CoalitionConvention convention, int enumeration_cap) {
  ValidateRun(corpus, config);
  const int k = corpus.languages.size();
  if (k > enumeration_cap || k > kMaxPlayers) {
    throw Error(ErrorCode::kCapExceeded, std::to_string(k) + " languages exceed the enumeration cap of " +
                                             std::to_string(enumeration_cap));
  }
  const TrainerState initial = InitialState(corpus, config);
  const std::vector<int> full_slots = FullRunSlots(corpus, config);
  const std::size_t count = std::size_t{1} << k;

  std::vector<Vector> final_losses(count);
  std::vector<double> base_losses(k);
  for (int j = 0; j < k; ++j) base_losses[j] = ValidationLoss(corpus, config.model, initial.params, j);

  auto train_one = [&](Coalition mask) {
    std::vector<int> slots;
    if (convention == CoalitionConvention::kFixedBudget) {
      slots = UniformSlots(config.batch_size, mask, k);
    } else {
      slots.assign(k, 0);
      for (int i = 0; i < k; ++i) {
        if (Contains(mask, i)) slots[i] = full_slots[i];
      }
    }
    TrainerState state = initial;
    Train(corpus, config, mask, slots, state, config.schedule.steps, nullptr, nullptr);
    Vector losses(k);
    for (int j = 0; j < k; ++j) losses(j) = ValidationLoss(corpus, config.model, state.params, j);
    final_losses[mask] = std::move(losses);
  };

  // Coalitions are independent jobs; each writes only its own slot.
  std::atomic<std::size_t> next{1};
  std::vector<std::exception_ptr> failures(count);
  auto worker = [&] {
    for (std::size_t mask = next++; mask < count; mask = next++) {
      try {
        train_one(mask);
      } catch (...) {
        failures[mask] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1U, std::min<unsigned>(std::thread::hardware_concurrency(), count - 1));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  auto table = std::make_shared<std::vector<Vector>>(std::move(final_losses));
  auto base = std::make_shared<std::vector<double>>(std::move(base_losses));
  return CoalitionGame(corpus.languages, [table, base](Coalition s, int j) { return (*base)[j] - (*table)[s](j); });
}

}  // namespace mixlaw
