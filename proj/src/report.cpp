#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "codebias/errors.hpp"
#include "codebias/harness.hpp"

namespace codebias {

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

namespace {

nlohmann::json agg_json(const std::vector<double>& v) {
  const Aggregate a = aggregate(v);
  return {{"mean", a.mean}, {"std", a.std}};
}

nlohmann::json seed_json(const SeedResult& s) {
  nlohmann::json j = {{"seed", s.seed},
                      {"intra", s.intra},
                      {"inter", s.inter},
                      {"adv", s.adv},
                      {"attack_success", s.attack_success},
                      {"attacked", s.attacked},
                      {"ratio_contains", s.ratio_contains},
                      {"ratio_only", s.ratio_only},
                      {"final_loss", s.final_loss}};
  j["alignment_r"] = s.alignment_r ? nlohmann::json(*s.alignment_r) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json summary_json(const std::vector<SeedResult>& seeds) {
  auto col = [&](auto f) {
    std::vector<double> v;
    for (const auto& s : seeds) {
      if (auto x = f(s)) v.push_back(*x);
    }
    return agg_json(v);
  };
  nlohmann::json j;
  j["intra"] = col([](const SeedResult& s) { return std::optional<double>(s.intra); });
  j["inter"] = col([](const SeedResult& s) { return std::optional<double>(s.inter); });
  j["adv"] = col([](const SeedResult& s) { return std::optional<double>(s.adv); });
  j["attack_success"] = col([](const SeedResult& s) { return std::optional<double>(s.attack_success); });
  j["alignment_r"] = col([](const SeedResult& s) { return s.alignment_r; });
  for (std::size_t n = 0; n < 3; ++n) {
    j["ratio_contains"].push_back(col([n](const SeedResult& s) { return std::optional<double>(s.ratio_contains[n]); }));
    j["ratio_only"].push_back(col([n](const SeedResult& s) { return std::optional<double>(s.ratio_only[n]); }));
  }
  return j;
}

nlohmann::json plot_json(const PlotData& p) {
  nlohmann::json bars = nlohmann::json::array();
  for (std::size_t i = 0; i < p.bars.size(); ++i) {
    bars.push_back({{"word", p.bars[i].word},
                    {"mean_ig", p.bars[i].mean_ig},
                    {"category", to_string(p.bars[i].category)},
                    {"cond_idf", p.cond_idf[i]},
                    {"fitted", p.fitted[i]}});
  }
  return {{"label", p.label}, {"bars", bars}};
}

nlohmann::json case_json(const CaseStudy& c) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : c.tokens) tokens.push_back(t.text);
  nlohmann::json j = {{"sample_id", c.sample_id}, {"tokens", tokens},       {"per_token", c.per_token},
                      {"evidence", c.evidence},   {"label", c.label},       {"predicted", c.predicted}};
  j["target"] = c.target ? nlohmann::json(*c.target) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["config"] = report.config;
  j["notes"] = {
      {"attack_success", "artifact-defined: fraction of perturbed samples whose prediction changes"},
      {"adversarial_training", "adversarial counterparts regenerated from the current parameters every epoch"},
      {"delta_adv", "ADV(method) - ADV(none) on the same task, from the seed means"},
      {"bpr_batches", "similarity-ordered batches are fixed; their order is reshuffled every epoch"},
  };
  std::map<Task, double> none_adv;
  for (const auto& s : report.settings) {
    if (s.method == Method{} && !s.seeds.empty()) {
      std::vector<double> v;
      for (const auto& r : s.seeds) v.push_back(r.adv);
      none_adv[s.task] = aggregate(v).mean;
    }
  }
  nlohmann::json results = nlohmann::json::array();
  for (const auto& s : report.settings) {
    nlohmann::json r;
    r["task"] = to_string(s.task);
    r["method"] = s.method.name();
    r["mitigation"] = to_string(s.method.mitigation);
    r["bpr"] = s.method.bpr;
    r["bpr_mode"] = to_string(s.bpr_mode);
    r["valid"] = s.valid;
    if (!s.valid) r["error"] = s.error;
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& x : s.seeds) seeds.push_back(seed_json(x));
    r["seeds"] = seeds;
    r["summary"] = summary_json(s.seeds);
    auto it = none_adv.find(s.task);
    if (it != none_adv.end() && !s.seeds.empty()) {
      r["delta_adv"] = r["summary"]["adv"]["mean"].get<double>() - it->second;
    } else {
      r["delta_adv"] = nullptr;
    }
    r["plot"] = s.plot ? plot_json(*s.plot) : nlohmann::json(nullptr);
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : s.cases) cases.push_back(case_json(c));
    r["cases"] = cases;
    results.push_back(r);
  }
  j["results"] = results;
  nlohmann::json sweeps = nlohmann::json::array();
  for (const auto& [task, points] : report.sweeps) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points) {
      pts.push_back({{"batch_size", p.batch_size}, {"intra", p.intra}, {"inter", p.inter}, {"adv", p.adv}});
    }
    sweeps.push_back({{"task", to_string(task)}, {"method", report.config["suite"]["batch_sweep"]["method"]}, {"points", pts}});
  }
  j["batch_sweep"] = sweeps;
  return j;
}

// ---------------------------------------------------------------- SVG / HTML

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v, const char* f = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const char* category_color(const std::string& c) {
  static const std::map<std::string, const char*> colors = {
      {"declaration-variable", "#d62728"}, {"function name", "#9467bd"}, {"identifier", "#d62728"},
      {"macro-like", "#ff7f0e"},           {"API", "#1f77b4"},           {"keyword", "#2ca02c"},
      {"literal", "#8c564b"},              {"operator", "#7f7f7f"},      {"delimiter", "#bcbd22"},
      {"other", "#17becf"}};
  auto it = colors.find(c);
  return it == colors.end() ? "#17becf" : it->second;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

}  // namespace

std::string distribution_svg(const nlohmann::json& plot, const std::string& title) {
  const auto& bars = plot.at("bars");
  const std::size_t n = bars.size();
  const double w = 900, h = 420, left = 60, right = 60, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  double max_ig = 0.0, max_ci = 0.0, min_ci = 0.0;
  std::set<std::string> cats;
  for (const auto& b : bars) {
    max_ig = std::max(max_ig, b.at("mean_ig").get<double>());
    max_ci = std::max({max_ci, b.at("fitted").get<double>(), b.at("cond_idf").get<double>()});
    min_ci = std::min(min_ci, b.at("fitted").get<double>());
    cats.insert(b.at("category").get<std::string>());
  }
  if (max_ig <= 0.0) max_ig = 1.0;
  if (max_ci <= min_ci) max_ci = min_ci + 1.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"#000\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"#000\"/>\n";
  os << "<text x=\"10\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 10 " << top + ph / 2 << ")\">mean IG</text>\n";
  os << "<text x=\"" << w - 15 << "\" y=\"" << top + ph / 2 << "\" transform=\"rotate(90 " << w - 15 << " " << top + ph / 2 << ")\">Cond-Idf</text>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 20 << "\" text-anchor=\"middle\">vocabulary rank</text>\n";
  const double bw = n > 0 ? pw / static_cast<double>(n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = bars[i];
    const double v = b.at("mean_ig").get<double>() / max_ig * ph;
    os << "<rect class=\"bar\" x=\"" << fmt(left + bw * static_cast<double>(i)) << "\" y=\"" << fmt(top + ph - v)
       << "\" width=\"" << fmt(std::max(bw - 1.0, 0.5)) << "\" height=\"" << fmt(v) << "\" fill=\""
       << category_color(b.at("category").get<std::string>()) << "\"><title>" << esc(b.at("word").get<std::string>())
       << "</title></rect>\n";
  }
  if (n > 0) {
    os << "<polyline fill=\"none\" stroke=\"#000\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double y = (bars[i].at("fitted").get<double>() - min_ci) / (max_ci - min_ci) * ph;
      os << fmt(left + bw * (static_cast<double>(i) + 0.5)) << "," << fmt(top + ph - y) << " ";
    }
    os << "\"/>\n";
  }
  double ly = top + 5;
  for (const auto& c : cats) {
    os << "<rect x=\"" << left + pw - 130 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << category_color(c) << "\"/>";
    os << "<text x=\"" << left + pw - 115 << "\" y=\"" << ly + 9 << "\">" << esc(c) << "</text>\n";
    ly += 14;
  }
  os << "<line x1=\"" << left + pw - 130 << "\" y1=\"" << ly + 5 << "\" x2=\"" << left + pw - 120 << "\" y2=\"" << ly + 5 << "\" stroke=\"#000\" stroke-width=\"2\"/>";
  os << "<text x=\"" << left + pw - 115 << "\" y=\"" << ly + 9 << "\">Cond-Idf fit</text>\n";
  os << "</svg>\n";
  return os.str();
}

namespace {

std::string sweep_svg(const nlohmann::json& sweep, const std::string& title) {
  const auto& pts = sweep.at("points");
  const double w = 520, h = 320, left = 50, top = 40, pw = 420, ph = 220;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"#000\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"#000\"/>\n";
  const std::size_t n = pts.size();
  auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  auto py = [&](double acc) { return top + ph - acc * ph; };
  const std::pair<const char*, const char*> series[] = {{"intra", "#2ca02c"}, {"inter", "#1f77b4"}, {"adv", "#d62728"}};
  double ly = top;
  for (const auto& [key, color] : series) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) os << fmt(px(i)) << "," << fmt(py(pts[i].at(key).get<double>())) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << left + pw - 40 << "\" y=\"" << ly + 10 << "\" fill=\"" << color << "\">" << key << "</text>\n";
    ly += 14;
  }
  for (std::size_t i = 0; i < n; ++i) {
    os << "<text x=\"" << fmt(px(i)) << "\" y=\"" << top + ph + 15 << "\" text-anchor=\"middle\">"
       << pts[i].at("batch_size").get<std::size_t>() << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    os << "<text x=\"" << left - 5 << "\" y=\"" << fmt(py(t / 4.0) + 4) << "\" text-anchor=\"end\">" << fmt(t / 4.0) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">batch size</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::string case_html(const nlohmann::json& c, const std::string& title) {
  const auto& tokens = c.at("tokens");
  const auto& weights = c.at("per_token");
  std::set<std::size_t> evidence;
  for (const auto& e : c.at("evidence")) evidence.insert(e.get<std::size_t>());
  double max_w = 0.0;
  for (const auto& w : weights) max_w = std::max(max_w, w.get<double>());
  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << esc(title) << "</title>\n"
     << "<style>body{background:#ffffff;font-family:monospace}span.t{padding:1px 2px;margin:1px;display:inline-block}"
     << "span.ev{border-bottom:2px solid #1f77b4}</style></head><body>\n";
  os << "<h3>" << esc(title) << "</h3>\n<p>label " << c.at("label").get<int>() << ", predicted "
     << c.at("predicted").get<int>() << "; green shade = token weight, underline = ground-truth evidence</p>\n<p>";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double w = max_w > 0.0 ? weights[i].get<double>() / max_w : 0.0;
    // Blend from the page background toward green.
    const int r = static_cast<int>(std::lround(255.0 - w * (255.0 - 46.0)));
    const int g = static_cast<int>(std::lround(255.0 - w * (255.0 - 160.0)));
    const int b = static_cast<int>(std::lround(255.0 - w * (255.0 - 44.0)));
    char color[8];
    std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, b);
    os << "<span class=\"t" << (evidence.count(i) ? " ev" : "") << "\" style=\"background:" << color << "\" title=\""
       << fmt(weights[i].get<double>(), "%.4f") << "\">" << esc(tokens[i].get<std::string>()) << "</span>";
    const std::string& text = tokens[i].get<std::string>();
    if (text == ";" || text == "{" || text == "}") os << "<br>\n";
  }
  os << "</p></body></html>\n";
  return os.str();
}

void emit_from_metrics(const nlohmann::json& metrics, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::ostringstream csv;
  csv << "task,method,valid,intra_mean,intra_std,inter_mean,inter_std,adv_mean,adv_std,delta_adv,attack_success,"
         "top1_contains,top2_contains,top3_contains,top1_only,top2_only,top3_only,alignment_r\n";
  auto g = [](const nlohmann::json& j) { return fmt(j.get<double>(), "%.4f"); };
  bool wrote_main_svg = false;
  for (const auto& r : metrics.at("results")) {
    const auto& s = r.at("summary");
    csv << r.at("task").get<std::string>() << ',' << r.at("method").get<std::string>() << ','
        << (r.at("valid").get<bool>() ? "true" : "false") << ',' << g(s["intra"]["mean"]) << ',' << g(s["intra"]["std"])
        << ',' << g(s["inter"]["mean"]) << ',' << g(s["inter"]["std"]) << ',' << g(s["adv"]["mean"]) << ','
        << g(s["adv"]["std"]) << ',' << (r.at("delta_adv").is_null() ? std::string() : g(r["delta_adv"])) << ','
        << g(s["attack_success"]["mean"]);
    for (int n = 0; n < 3; ++n) csv << ',' << g(s["ratio_contains"][n]["mean"]);
    for (int n = 0; n < 3; ++n) csv << ',' << g(s["ratio_only"][n]["mean"]);
    csv << ',' << g(s["alignment_r"]["mean"]) << '\n';

    const std::string name = r.at("task").get<std::string>() + "_" + r.at("method").get<std::string>();
    if (!r.at("plot").is_null()) {
      const std::string title = "Sorted mean IG, " + r.at("task").get<std::string>() + ", " +
                                r.at("method").get<std::string>() + " (Cond-Idf label " +
                                std::to_string(r["plot"]["label"].get<int>()) + ")";
      const std::string svg = distribution_svg(r.at("plot"), title);
      std::filesystem::create_directories(out_dir / "plots");
      write_file(out_dir / "plots" / ("distribution_" + slug(name) + ".svg"), svg);
      if (!wrote_main_svg) {
        write_file(out_dir / "distribution.svg", svg);
        wrote_main_svg = true;
      }
    }
    for (const auto& c : r.at("cases")) {
      std::filesystem::create_directories(out_dir / "cases");
      const std::string id = c.at("sample_id").get<std::string>();
      write_file(out_dir / "cases" / (slug(name + "_" + id) + ".html"), case_html(c, name + ": " + id));
    }
  }
  write_file(out_dir / "tables.csv", csv.str());
  for (const auto& sw : metrics.value("batch_sweep", nlohmann::json::array())) {
    const std::string task = sw.at("task").get<std::string>();
    write_file(out_dir / ("batch_sweep_" + task + ".svg"),
               sweep_svg(sw, "Batch size vs accuracy, " + task + ", " + sw.at("method").get<std::string>()));
  }
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const nlohmann::json metrics = report_to_json(report);
  write_file(out_dir / "metrics.json", metrics.dump(2) + "\n");
  emit_from_metrics(metrics, out_dir);
}

}  // namespace codebias
