#include "codebias/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "codebias/errors.hpp"

namespace codebias {

std::vector<double> summarize_per_token(const Tensor& raw) {
  std::vector<double> w(raw.rows, 0.0);
  double norm = 0.0;
  for (std::size_t t = 0; t < raw.rows; ++t) {
    const double* r = raw.row(t);
    double s = 0.0;
    for (std::size_t k = 0; k < raw.cols; ++k) s += std::abs(r[k]);
    w[t] = s;
    norm += s * s;
  }
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& v : w) v /= norm;
  }
  return w;
}

AttributionVector integrated_gradients(const ModelParams& params, std::span<const int> ids,
                                       std::optional<std::size_t> target, int target_class, int m) {
  if (m < 1) throw InvalidArgument("integrated gradients needs m >= 1");
  if (target_class < 0 || target_class >= params.cfg.num_classes) {
    throw InvalidArgument("target class " + std::to_string(target_class) + " out of range");
  }
  const Tensor x = embed(params, ids);
  Tensor sum(x.rows, x.cols);
  Grads scratch = zeros_like(params);
  OutputGrads og;
  og.d_logits.assign(static_cast<std::size_t>(params.cfg.num_classes), 0.0);
  og.d_logits[static_cast<std::size_t>(target_class)] = 1.0;
  Tensor d_x;
  for (int k = 1; k <= m; ++k) {
    Tensor xk = x;
    const double alpha = static_cast<double>(k) / static_cast<double>(m);
    for (double& v : xk.data) v *= alpha;
    const ForwardTrace tr = forward_embeddings(params, std::move(xk), target);
    backward(params, tr, {}, og, scratch, &d_x);
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += d_x.data[i];
  }
  AttributionVector a;
  a.raw = Tensor(x.rows, x.cols);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < x.data.size(); ++i) a.raw.data[i] = x.data[i] * sum.data[i] * inv_m;
  a.per_token = summarize_per_token(a.raw);
  a.m_used = m;
  a.target_class = target_class;
  return a;
}

std::vector<std::size_t> top_n_tokens(const AttributionVector& attr, std::size_t n) {
  const std::size_t T = attr.per_token.size();
  if (n < 1 || n > T) throw InvalidArgument("top-n needs 1 <= n <= T");
  std::vector<std::size_t> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return attr.per_token[a] > attr.per_token[b]; });
  idx.resize(n);
  return idx;
}

void write_attributions(std::span<const AttributionRecord> records, std::ostream& out) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["sample_id"] = r.sample_id;
    j["target"] = r.target_class;
    if (r.target_token) j["target_token"] = *r.target_token;
    j["m"] = r.m;
    j["per_token"] = r.per_token;
    out << j.dump() << '\n';
  }
}

std::vector<AttributionRecord> read_attributions(std::istream& in) {
  std::vector<AttributionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AttributionRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.target_class = j.at("target").get<int>();
      if (j.contains("target_token")) r.target_token = j.at("target_token").get<std::size_t>();
      r.m = j.at("m").get<int>();
      r.per_token = j.at("per_token").get<std::vector<double>>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace codebias
