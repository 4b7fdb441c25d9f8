#include "codebias/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "codebias/errors.hpp"
#include "codebias/random.hpp"
#include "codebias/simbpr.hpp"

namespace codebias {

void ModelConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || head_dim < 1 || bias_dim < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

std::array<Tensor*, kNumTensors> ModelParams::tensors() { return {&E, &W1, &b1, &W_g, &b_g, &W_h, &b_h, &W_b, &b_b}; }

std::array<const Tensor*, kNumTensors> ModelParams::tensors() const {
  return {&E, &W1, &b1, &W_g, &b_g, &W_h, &b_h, &W_b, &b_b};
}

const std::array<std::string_view, kNumTensors>& ModelParams::tensor_names() {
  static const std::array<std::string_view, kNumTensors> names = {"E",   "W1",  "b1",  "W_g", "b_g",
                                                                  "W_h", "b_h", "W_b", "b_b"};
  return names;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.cfg = p.cfg;
  auto dst = z.tensors();
  auto src = p.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) *dst[i] = Tensor(src[i]->rows, src[i]->cols);
  return z;
}

namespace {

void glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-a, a);
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  const std::size_t hid = cfg.hidden_dim;
  const auto classes = static_cast<std::size_t>(cfg.num_classes);
  p.E = Tensor(cfg.vocab_size, cfg.embed_dim);
  p.W1 = Tensor(hid, cfg.input_width());
  p.b1 = Tensor(hid, 1);
  p.W_g = Tensor(classes, hid);
  p.b_g = Tensor(classes, 1);
  p.W_h = Tensor(cfg.head_dim, hid);
  p.b_h = Tensor(cfg.head_dim, 1);
  p.W_b = Tensor(cfg.bias_dim, hid);
  p.b_b = Tensor(cfg.bias_dim, 1);
  Rng rng(mix_seed(seed, 0x1417));
  glorot(p.E, cfg.vocab_size, cfg.embed_dim, rng);
  glorot(p.W1, cfg.input_width(), hid, rng);
  glorot(p.W_g, hid, classes, rng);
  glorot(p.W_h, hid, cfg.head_dim, rng);
  glorot(p.W_b, hid, cfg.bias_dim, rng);
  return p;
}

bool all_finite(const ModelParams& params) {
  for (const Tensor* t : params.tensors()) {
    for (double v : t->data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

double cross_entropy(std::span<const double> logits, int label) {
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

Tensor embed(const ModelParams& params, std::span<const int> ids) {
  const std::size_t d = params.cfg.embed_dim;
  Tensor x(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto id = static_cast<std::size_t>(ids[t]);
    if (id >= params.E.rows) throw IndexError("token id " + std::to_string(ids[t]) + " outside vocabulary");
    std::copy_n(params.E.row(id), d, x.row(t));
  }
  return x;
}

namespace {

void affine(const Tensor& W, const Tensor& b, std::span<const double> in, std::vector<double>& out) {
  out.assign(W.rows, 0.0);
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double* w = W.row(r);
    double s = b.data[r];
    for (std::size_t c = 0; c < W.cols; ++c) s += w[c] * in[c];
    out[r] = s;
  }
}

// grads_W += g (x) in, grads_b += g, d_in += W^T g (d_in may be null).
void affine_back(const Tensor& W, std::span<const double> in, std::span<const double> g, Tensor& gW, Tensor& gb,
                 std::vector<double>* d_in) {
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    double* gw = gW.row(r);
    for (std::size_t c = 0; c < W.cols; ++c) gw[c] += gr * in[c];
    gb.data[r] += gr;
    if (d_in != nullptr) {
      const double* w = W.row(r);
      for (std::size_t c = 0; c < W.cols; ++c) (*d_in)[c] += gr * w[c];
    }
  }
}

}  // namespace

ForwardTrace forward_embeddings(const ModelParams& params, Tensor x, std::optional<std::size_t> target, bool heads) {
  const ModelConfig& cfg = params.cfg;
  const std::size_t d = cfg.embed_dim;
  if (x.cols != d) throw InvalidArgument("embedding width mismatch");
  if (x.rows == 0) throw InvalidArgument("empty sample");
  if (cfg.task == Task::TypeInf) {
    if (!target) throw InvalidArgument("TypeInf forward needs a target token");
    if (*target >= x.rows) throw IndexError("target token " + std::to_string(*target) + " out of range");
  } else if (target) {
    throw InvalidArgument("VulnDet forward takes no target");
  }

  ForwardTrace tr;
  tr.target = target;
  tr.pooled.assign(d, 0.0);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* row = x.row(t);
    for (std::size_t k = 0; k < d; ++k) tr.pooled[k] += row[k];
  }
  const double inv_t = 1.0 / static_cast<double>(x.rows);
  for (double& v : tr.pooled) v *= inv_t;

  if (cfg.task == Task::TypeInf) {
    tr.input.assign(x.row(*target), x.row(*target) + d);
    tr.input.insert(tr.input.end(), tr.pooled.begin(), tr.pooled.end());
  } else {
    tr.input = tr.pooled;
  }
  affine(params.W1, params.b1, tr.input, tr.pre);
  tr.hidden = tr.pre;
  if (cfg.activation == Activation::Tanh) {
    for (double& v : tr.hidden) v = std::tanh(v);
  }
  affine(params.W_g, params.b_g, tr.hidden, tr.logits);
  tr.probs = softmax(tr.logits);
  if (heads) {
    affine(params.W_h, params.b_h, tr.hidden, tr.part);
    affine(params.W_b, params.b_b, tr.hidden, tr.bias_logits);
  }
  tr.x = std::move(x);
  return tr;
}

ForwardTrace forward(const ModelParams& params, std::span<const int> ids, std::optional<std::size_t> target,
                     bool heads) {
  return forward_embeddings(params, embed(params, ids), target, heads);
}

void backward(const ModelParams& params, const ForwardTrace& tr, std::span<const int> ids, const OutputGrads& og,
              Grads& grads, Tensor* d_x) {
  const ModelConfig& cfg = params.cfg;
  const std::size_t d = cfg.embed_dim;
  std::vector<double> d_r(cfg.hidden_dim, 0.0);
  if (!og.d_logits.empty()) affine_back(params.W_g, tr.hidden, og.d_logits, grads.W_g, grads.b_g, &d_r);
  if (!og.d_part.empty()) affine_back(params.W_h, tr.hidden, og.d_part, grads.W_h, grads.b_h, &d_r);
  if (!og.d_bias.empty()) {
    std::vector<double> d_r_bias(cfg.hidden_dim, 0.0);
    affine_back(params.W_b, tr.hidden, og.d_bias, grads.W_b, grads.b_b, &d_r_bias);
    for (std::size_t k = 0; k < d_r.size(); ++k) d_r[k] -= og.reversal * d_r_bias[k];
  }
  std::vector<double> d_pre = d_r;
  if (cfg.activation == Activation::Tanh) {
    for (std::size_t k = 0; k < d_pre.size(); ++k) d_pre[k] *= 1.0 - tr.hidden[k] * tr.hidden[k];
  }
  std::vector<double> d_input(tr.input.size(), 0.0);
  affine_back(params.W1, tr.input, d_pre, grads.W1, grads.b1, &d_input);

  const std::size_t T = tr.x.rows;
  const double inv_t = 1.0 / static_cast<double>(T);
  const double* d_pooled = cfg.task == Task::TypeInf ? d_input.data() + d : d_input.data();
  const bool update_e = !ids.empty();
  if (update_e && ids.size() != T) throw Misalignment("ids length differs from trace");
  if (d_x != nullptr) *d_x = Tensor(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    double* ge = update_e ? grads.E.row(static_cast<std::size_t>(ids[t])) : nullptr;
    double* gx = d_x != nullptr ? d_x->row(t) : nullptr;
    const bool is_target = tr.target && *tr.target == t;
    for (std::size_t k = 0; k < d; ++k) {
      double g = d_pooled[k] * inv_t;
      if (is_target) g += d_input[k];
      if (ge) ge[k] += g;
      if (gx) gx[k] = g;
    }
  }
}

std::string_view to_string(Mitigation m) {
  switch (m) {
    case Mitigation::None: return "none";
    case Mitigation::Reweight: return "reweight";
    case Mitigation::Poe: return "poe";
    case Mitigation::AdvTrain: return "advtrain";
    case Mitigation::GradRev: return "gradrev";
  }
  return "?";
}

Mitigation mitigation_from_string(std::string_view name) {
  for (auto m : {Mitigation::None, Mitigation::Reweight, Mitigation::Poe, Mitigation::AdvTrain, Mitigation::GradRev}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mitigation '" + std::string(name) + "'");
}

namespace {

constexpr double kProbFloor = 1e-12;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// d CE(softmax(l), y) / dl scaled by s, written into out.
void ce_grad(std::span<const double> probs, int label, double scale, std::vector<double>& out) {
  out.resize(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) {
    out[k] = scale * (probs[k] - (static_cast<int>(k) == label ? 1.0 : 0.0));
  }
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFinite(std::string("non-finite ") + what);
}

}  // namespace

LossResult loss_and_backward(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool use_bpr = spec.bpr_coef != 0.0;
  const bool heads = use_bpr || spec.mitigation == Mitigation::GradRev;
  if (use_bpr && spec.pair_weights.size() != n * n) throw InvalidArgument("pair_weights must be batch x batch");

  LossResult res;
  res.grads = zeros_like(params);
  if (spec.input_grads) res.input_grads.resize(n);

  std::vector<ForwardTrace> traces;
  traces.reserve(n);
  std::vector<OutputGrads> ogs(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = batch[i];
    traces.push_back(forward(params, ex.ids, ex.target, heads));
    const ForwardTrace& tr = traces.back();
    OutputGrads& og = ogs[i];
    const double w = ex.weight * inv_n;
    switch (spec.mitigation) {
      case Mitigation::None:
      case Mitigation::AdvTrain:
      case Mitigation::GradRev: {
        const double ce = cross_entropy(tr.logits, ex.label);
        res.task_loss += w * ce;
        ce_grad(tr.probs, ex.label, w, og.d_logits);
        break;
      }
      case Mitigation::Reweight: {
        const double scale = w * (1.0 - ex.p_b_true);
        res.task_loss += scale * cross_entropy(tr.logits, ex.label);
        ce_grad(tr.probs, ex.label, scale, og.d_logits);
        break;
      }
      case Mitigation::Poe: {
        if (ex.p_b.size() != tr.logits.size()) throw InvalidArgument("p_b width differs from num_classes");
        std::vector<double> combined(tr.logits);
        for (std::size_t k = 0; k < combined.size(); ++k) combined[k] += std::log(std::max(ex.p_b[k], kProbFloor));
        res.task_loss += w * cross_entropy(combined, ex.label);
        ce_grad(softmax(combined), ex.label, w, og.d_logits);
        break;
      }
    }
    if (spec.mitigation == Mitigation::GradRev) {
      const auto K = tr.bias_logits.size();
      std::vector<char> member(K, 0);
      for (int m : ex.bias_members) {
        if (m < 0 || static_cast<std::size_t>(m) >= K) throw IndexError("bias member out of range");
        member[static_cast<std::size_t>(m)] = 1;
      }
      const double inv_k = 1.0 / static_cast<double>(K);
      og.d_bias.resize(K);
      double bl = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double q = tr.bias_logits[k];
        const double t = member[k] ? 1.0 : 0.0;
        bl += softplus(q) - t * q;
        og.d_bias[k] = w * inv_k * (sigmoid(q) - t);
      }
      res.bias_loss += w * bl * inv_k;
      og.reversal = spec.reversal_coef;
    }
  }

  if (use_bpr) {
    std::vector<std::vector<double>> reprs(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      reprs[i] = traces[i].part;
      labels[i] = batch[i].label;
    }
    BprValue bpr = bpr_loss_grad(reprs, labels, spec.pair_weights);
    res.bpr_loss = bpr.loss;
    for (std::size_t i = 0; i < n; ++i) {
      ogs[i].d_part.resize(bpr.d_reprs[i].size());
      for (std::size_t k = 0; k < bpr.d_reprs[i].size(); ++k) ogs[i].d_part[k] = spec.bpr_coef * bpr.d_reprs[i][k];
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    backward(params, traces[i], batch[i].ids, ogs[i], res.grads, spec.input_grads ? &res.input_grads[i] : nullptr);
  }

  if (spec.mitigation == Mitigation::AdvTrain) {
    for (std::size_t i = 0; i < n; ++i) {
      const Example& ex = batch[i];
      if (ex.adv_ids.empty()) continue;
      const double w = ex.weight * inv_n;
      const ForwardTrace tr = forward(params, ex.adv_ids, ex.target, false);
      res.task_loss += w * cross_entropy(tr.logits, ex.label);
      OutputGrads og;
      ce_grad(tr.probs, ex.label, w, og.d_logits);
      backward(params, tr, ex.adv_ids, og, res.grads, nullptr);
    }
  }

  res.loss = res.task_loss - spec.reversal_coef * res.bias_loss * (spec.mitigation == Mitigation::GradRev ? 1.0 : 0.0) +
             spec.bpr_coef * res.bpr_loss;
  check_finite(res.loss, "loss");
  if (!all_finite(res.grads)) throw NonFinite("non-finite gradient");
  return res;
}

double grad_check(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec, double eps,
                  std::uint64_t seed, double fraction) {
  if (!(eps > 0.0)) throw InvalidArgument("grad_check needs eps > 0");
  LossSpec plain = spec;
  plain.input_grads = false;
  const LossResult analytic = loss_and_backward(params, batch, plain);

  ModelParams probe = params;
  auto probe_t = probe.tensors();
  auto grad_t = analytic.grads.tensors();
  Rng rng(mix_seed(seed, 0x9c));
  double worst = 0.0;
  for (std::size_t ti = 0; ti < kNumTensors; ++ti) {
    // Bias head is trained on bias_loss, everything else on the objective.
    const bool bias_head = ti >= 7;
    Tensor& t = *probe_t[ti];
    for (std::size_t e = 0; e < t.size(); ++e) {
      if (!rng.bernoulli(fraction)) continue;
      const double saved = t.data[e];
      t.data[e] = saved + eps;
      const LossResult up = loss_and_backward(probe, batch, plain);
      t.data[e] = saved - eps;
      const LossResult down = loss_and_backward(probe, batch, plain);
      t.data[e] = saved;
      const double f_up = bias_head ? up.bias_loss : up.loss;
      const double f_down = bias_head ? down.bias_loss : down.loss;
      const double numeric = (f_up - f_down) / (2.0 * eps);
      const double a = grad_t[ti]->data[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

int predict(const ModelParams& params, std::span<const int> ids, std::optional<std::size_t> target) {
  const ForwardTrace tr = forward(params, ids, target, false);
  return static_cast<int>(std::max_element(tr.logits.begin(), tr.logits.end()) - tr.logits.begin());
}

double accuracy(const ModelParams& params, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& ex : examples) ok += predict(params, ex.ids, ex.target) == ex.label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(examples.size());
}

void fit(ModelParams& params, std::span<const Example> examples, const FitConfig& cfg) {
  if (examples.empty()) return;
  AdamState state = make_adam_state(params);
  AdamHyper hyper;
  hyper.lr = cfg.lr;
  Rng rng(mix_seed(cfg.seed, 0xf17));
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Example> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(examples[order[i]]);
      }
      const LossResult r = loss_and_backward(params, batch, LossSpec{});
      adam_step(params, r.grads, state, hyper);
    }
  }
}

// ---------------------------------------------------------------- checkpoint

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},   {"hidden_dim", c.hidden_dim},
          {"head_dim", c.head_dim},     {"num_classes", c.num_classes}, {"bias_dim", c.bias_dim},
          {"task", to_string(c.task)},  {"activation", c.activation == Activation::Tanh ? "tanh" : "identity"}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<int>();
  c.bias_dim = j.at("bias_dim").get<std::size_t>();
  c.task = task_from_string(j.at("task").get<std::string>());
  c.activation = j.at("activation").get<std::string>() == "identity" ? Activation::Identity : Activation::Tanh;
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "codebias-checkpoint";
  j["version"] = 1;
  j["config"] = config_to_json(params.cfg);
  j["vocab"] = vocab.words();
  nlohmann::json tensors;
  const auto& names = ModelParams::tensor_names();
  auto ts = params.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    tensors[std::string(names[i])] = {{"rows", ts[i]->rows}, {"cols", ts[i]->cols}, {"data", ts[i]->data}};
  }
  j["tensors"] = tensors;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path, Vocabulary* vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(1, e.what());
  }
  if (j.value("version", 0) != 1) throw FormatError(1, "unsupported checkpoint version");
  ModelParams p;
  p.cfg = config_from_json(j.at("config"));
  const auto& names = ModelParams::tensor_names();
  auto ts = p.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    const auto& t = j.at("tensors").at(std::string(names[i]));
    ts[i]->rows = t.at("rows").get<std::size_t>();
    ts[i]->cols = t.at("cols").get<std::size_t>();
    ts[i]->data = t.at("data").get<std::vector<double>>();
    if (ts[i]->data.size() != ts[i]->rows * ts[i]->cols) throw FormatError(1, "tensor size mismatch");
  }
  if (vocab != nullptr) {
    *vocab = Vocabulary();
    for (const auto& w : j.at("vocab")) vocab->add(w.get<std::string>());
  }
  return p;
}

}  // namespace codebias
