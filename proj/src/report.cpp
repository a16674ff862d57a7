#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"
#include "nnmpc/pipeline.hpp"
#include "nnmpc/simulate.hpp"
#include "nnmpc/version.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

namespace {

struct Series {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<double> x;
  std::vector<double> y;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// One panel of a stacked line plot: axes, ticks, series, per-axis labels.
class SvgPanel {
 public:
  SvgPanel(double x, double y, double w, double h, std::string y_label)
      : x_(x), y_(y), w_(w), h_(h), y_label_(std::move(y_label)) {}

  void add(Series s) { series_.push_back(std::move(s)); }

  void add_hline(double value, const std::string& color) { hlines_.push_back({value, color}); }

  void render(std::ostream& os, bool with_x_label) const {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series_) {
      for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
      for (double v : s.y) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
    }
    for (const auto& [v, c] : hlines_) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) { ymax += 0.5; ymin -= 0.5; }
    const double pad = 0.06 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    auto px = [&](double v) { return x_ + (v - xmin) / (xmax - xmin) * w_; };
    auto py = [&](double v) { return y_ + h_ - (v - ymin) / (ymax - ymin) * h_; };

    os << "<rect x='" << x_ << "' y='" << y_ << "' width='" << w_ << "' height='"
       << h_ << "' fill='none' stroke='#000' stroke-width='1'/>\n";

    for (int t = 0; t <= 4; ++t) {
      const double vx = xmin + (xmax - xmin) * t / 4.0;
      const double vy = ymin + (ymax - ymin) * t / 4.0;
      os << "<line x1='" << px(vx) << "' y1='" << y_ + h_ << "' x2='" << px(vx)
         << "' y2='" << y_ + h_ + 4 << "' stroke='#000'/>\n";
      os << "<text x='" << px(vx) << "' y='" << y_ + h_ + 16
         << "' font-size='10' text-anchor='middle'>" << fmt(vx) << "</text>\n";
      os << "<line x1='" << x_ - 4 << "' y1='" << py(vy) << "' x2='" << x_
         << "' y2='" << py(vy) << "' stroke='#000'/>\n";
      os << "<text x='" << x_ - 6 << "' y='" << py(vy) + 3
         << "' font-size='10' text-anchor='end'>" << fmt(vy) << "</text>\n";
    }

    for (const auto& [v, color] : hlines_) {
      os << "<line x1='" << x_ << "' y1='" << py(v) << "' x2='" << x_ + w_
         << "' y2='" << py(v) << "' stroke='" << color
         << "' stroke-width='1' stroke-dasharray='6,4'/>\n";
    }

    for (const Series& s : series_) {
      os << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5'";
      if (s.dashed) os << " stroke-dasharray='4,3'";
      os << " points='";
      for (size_t i = 0; i < s.x.size(); ++i) {
        os << px(s.x[i]) << "," << py(s.y[i]) << " ";
      }
      os << "'/>\n";
    }

    os << "<text x='" << x_ - 44 << "' y='" << y_ + h_ / 2
       << "' font-size='11' text-anchor='middle' transform='rotate(-90 " << x_ - 44
       << " " << y_ + h_ / 2 << ")'>" << y_label_ << "</text>\n";
    if (with_x_label) {
      os << "<text x='" << x_ + w_ / 2 << "' y='" << y_ + h_ + 32
         << "' font-size='11' text-anchor='middle'>t [s]</text>\n";
    }
  }

  void render_legend(std::ostream& os) const {
    double lx = x_ + 10, ly = y_ + 14;
    for (const Series& s : series_) {
      os << "<line x1='" << lx << "' y1='" << ly - 4 << "' x2='" << lx + 24
         << "' y2='" << ly - 4 << "' stroke='" << s.color << "' stroke-width='2'/>\n";
      os << "<text x='" << lx + 30 << "' y='" << ly
         << "' font-size='11'>" << s.label << "</text>\n";
      ly += 14;
    }
  }

 private:
  double x_, y_, w_, h_;
  std::string y_label_;
  std::vector<Series> series_;
  std::vector<std::pair<double, std::string>> hlines_;
};

std::vector<double> quartiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto q = [&](double p) {
    const double pos = p * (values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - lo;
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  return {values.front(), q(0.25), q(0.5), q(0.75), values.back()};
}

double json_number(const ordered_json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j[key].get<double>();
}

ordered_json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed JSON in " + p.string());
  return j;
}

}  // namespace

StageResult cmd_report(const RunConfig& cfg, const PipelineIo& io) {
  std::ostream& log = *io.log;
  std::filesystem::create_directories(io.out_dir);
  auto path = [&](const std::string& n) { return io.out_dir / n; };

  struct Requirement { std::string file; std::string stage; };
  const std::vector<Requirement> required = {
      {artifact::dataset, "gen-data"},
      {artifact::checkpoint("nominal"), "train --variant nominal"},
      {artifact::checkpoint("sensreg"), "train --variant sensreg"},
      {artifact::train_report("nominal"), "train --variant nominal"},
      {artifact::train_report("sensreg"), "train --variant sensreg"},
      {artifact::trajectory("mpc"), "simulate --controller mpc"},
      {artifact::trajectory("nominal"), "simulate --controller nominal"},
      {artifact::trajectory("sensreg"), "simulate --controller sensreg"},
      {artifact::metrics("nominal"), "simulate --controller nominal"},
      {artifact::metrics("sensreg"), "simulate --controller sensreg"},
  };
  std::string missing;
  for (const Requirement& r : required) {
    if (!std::filesystem::exists(path(r.file))) {
      missing += "  " + r.file + "  (produce with: nnmpc " + r.stage + ")\n";
    }
  }
  if (!missing.empty()) {
    throw ConfigError("report: missing stage artifacts:\n" + missing);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const OcpSpec spec = cfg.make_ocp_spec();
  const int nx = spec.state_dim();
  const int nu = spec.input_dim();

  const Dataset data = load_dataset(path(artifact::dataset));
  const MlpParams net_nom = load_mlp(path(artifact::checkpoint("nominal")));
  const MlpParams net_reg = load_mlp(path(artifact::checkpoint("sensreg")));
  const Trajectory traj_mpc = load_trajectory_csv(path(artifact::trajectory("mpc")), nx, nu);
  const Trajectory traj_nom = load_trajectory_csv(path(artifact::trajectory("nominal")), nx, nu);
  const Trajectory traj_reg = load_trajectory_csv(path(artifact::trajectory("sensreg")), nx, nu);

  // fig1: states and input of the three closed loops.
  {
    std::ofstream svg(path(artifact::fig1), std::ios::binary);
    const double width = 780, panel_h = 200, left = 80, top = 30, gap = 48;
    const double panel_w = width - left - 30;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
        << 3 * panel_h + 2 * gap + top + 60 << "' font-family='sans-serif'>\n";
    svg << "<text x='" << width / 2
        << "' y='18' font-size='13' text-anchor='middle'>closed-loop swing-up ("
        << cfg.sim_steps * spec.model.step_length() << " s)</text>\n";

    const char* colors[3] = {"#000000", "#d62728", "#1f77b4"};
    const char* labels[3] = {"MPC", "nominal NN", "sens-reg NN"};
    const Trajectory* trajs[3] = {&traj_mpc, &traj_nom, &traj_reg};
    const std::string units[3] = {"x1 [rad]", "x2 [rad/s]", "u [N·m]"};

    for (int panel = 0; panel < 3; ++panel) {
      SvgPanel pl(left, top + panel * (panel_h + gap), panel_w, panel_h, units[panel]);
      for (int s = 0; s < 3; ++s) {
        Series ser;
        ser.label = labels[s];
        ser.color = colors[s];
        const Trajectory& t = *trajs[s];
        if (panel < 2) {
          for (size_t k = 0; k < t.states.size(); ++k) {
            ser.x.push_back(t.time[k]);
            ser.y.push_back(t.states[k][panel]);
          }
        } else {
          for (size_t k = 0; k < t.inputs.size(); ++k) {
            ser.x.push_back(t.time[k]);
            ser.y.push_back(t.inputs[k][0]);
          }
        }
        pl.add(std::move(ser));
      }
      if (panel == 1) {
        if (std::isfinite(spec.state_upper[1])) pl.add_hline(spec.state_upper[1], "#888888");
        if (std::isfinite(spec.state_lower[1])) pl.add_hline(spec.state_lower[1], "#888888");
      }
      if (panel == 2) {
        if (std::isfinite(spec.input_upper[0])) pl.add_hline(spec.input_upper[0], "#888888");
        if (std::isfinite(spec.input_lower[0])) pl.add_hline(spec.input_lower[0], "#888888");
      }
      pl.render(svg, panel == 2);
      if (panel == 0) pl.render_legend(svg);
    }
    svg << "</svg>\n";
  }

  // fig2 data: per-point approximation errors, divergence and violation series.
  std::vector<std::pair<std::string, std::vector<double>>> box_series;
  {
    std::vector<double> err_nom, err_reg;
    for (const Sample& s : data.samples) {
      if (!s.converged()) continue;
      err_nom.push_back((s.u - mlp_forward(net_nom, s.x)).norm());
      err_reg.push_back((s.u - mlp_forward(net_reg, s.x)).norm());
    }
    box_series.emplace_back("approx_error_nominal", std::move(err_nom));
    box_series.emplace_back("approx_error_sensreg", std::move(err_reg));
    box_series.emplace_back("divergence_nominal", traj_nom.divergence);
    box_series.emplace_back("divergence_sensreg", traj_reg.divergence);

    auto violation_series = [&](const Trajectory& t) {
      std::vector<double> v;
      for (size_t k = 1; k < t.states.size(); ++k) {
        double mag = 0.0;
        for (int i = 0; i < nx; ++i) {
          if (std::isfinite(spec.state_upper[i]))
            mag = std::max(mag, t.states[k][i] - spec.state_upper[i]);
          if (std::isfinite(spec.state_lower[i]))
            mag = std::max(mag, spec.state_lower[i] - t.states[k][i]);
        }
        v.push_back(mag);
      }
      return v;
    };
    box_series.emplace_back("violation_nominal", violation_series(traj_nom));
    box_series.emplace_back("violation_sensreg", violation_series(traj_reg));

    std::ofstream csv(path(artifact::fig2_data), std::ios::binary);
    csv << "series,value\n";
    char buf[64];
    for (const auto& [name, values] : box_series) {
      for (double v : values) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        csv << name << "," << buf << "\n";
      }
    }
  }

  // tables.md: training and closed-loop statistics plus box-plot summaries.
  {
    const ordered_json tr_nom = read_json(path(artifact::train_report("nominal")));
    const ordered_json tr_reg = read_json(path(artifact::train_report("sensreg")));
    const ordered_json m_nom = read_json(path(artifact::metrics("nominal")));
    const ordered_json m_reg = read_json(path(artifact::metrics("sensreg")));

    std::ofstream md(path(artifact::tables), std::ios::binary);
    md << "# Post-training statistics\n\n";
    md << "| Training type | Validation R2 | epsilon_D | Lipschitz constant (norm-product upper) |\n";
    md << "|---|---|---|---|\n";
    md << "| Nominal | " << fmt(json_number(tr_nom, "final_r2")) << " | "
       << fmt(json_number(tr_nom, "final_epsilon_d")) << " | "
       << fmt(lipschitz_nn_upper(net_nom)) << " |\n";
    md << "| Sensitivity-regularized | " << fmt(json_number(tr_reg, "final_r2")) << " | "
       << fmt(json_number(tr_reg, "final_epsilon_d")) << " | "
       << fmt(lipschitz_nn_upper(net_reg)) << " |\n\n";

    md << "# Closed-loop statistics\n\n";
    md << "| Training type | Constraint violations in % | Max violation magnitude | Max input divergence |\n";
    md << "|---|---|---|---|\n";
    md << "| Nominal | " << fmt(json_number(m_nom, "violation_pct")) << " | "
       << fmt(json_number(m_nom, "max_violation")) << " | "
       << fmt(json_number(m_nom, "max_input_divergence")) << " |\n";
    md << "| Sensitivity-regularized | " << fmt(json_number(m_reg, "violation_pct")) << " | "
       << fmt(json_number(m_reg, "max_violation")) << " | "
       << fmt(json_number(m_reg, "max_input_divergence")) << " |\n\n";

    for (const std::string variant : {std::string("nominal"), std::string("sensreg")}) {
      const auto brp = path(artifact::bound_report(variant));
      if (!std::filesystem::exists(brp)) continue;
      const ordered_json br = read_json(brp);
      md << "# Certification (" << variant << ")\n\n";
      md << "- epsilon: " << fmt(json_number(br, "epsilon")) << "\n";
      md << "- epsilon_D: " << fmt(json_number(br, "epsilon_d")) << "\n";
      md << "- delta required: " << fmt(json_number(br, "delta_required")) << "\n";
      md << "- delta actual: " << fmt(json_number(br, "delta_actual")) << "\n";
      md << "- certified: " << (br.contains("certified") && br["certified"].get<bool>() ? "yes" : "no") << "\n";
      if (br.contains("empirical_max_error")) {
        md << "- probed max error: " << fmt(json_number(br, "empirical_max_error")) << "\n";
      }
      md << "\n";
    }

    md << "# Box-plot summaries\n\n";
    md << "| series | min | q25 | median | q75 | max |\n";
    md << "|---|---|---|---|---|---|\n";
    for (const auto& [name, values] : box_series) {
      if (values.empty()) continue;
      const auto q = quartiles(values);
      md << "| " << name << " | " << fmt(q[0]) << " | " << fmt(q[1]) << " | "
         << fmt(q[2]) << " | " << fmt(q[3]) << " | " << fmt(q[4]) << " |\n";
    }
  }

  log << "report: wrote " << artifact::fig1 << ", " << artifact::fig2_data << ", "
      << artifact::tables << "\n";

  // Manifest entry, mirroring the other stages.
  StageResult res;
  res.artifacts = {artifact::fig1, artifact::fig2_data, artifact::tables};
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    const auto mp = path(artifact::manifest);
    ordered_json m;
    if (std::filesystem::exists(mp)) {
      std::ifstream in(mp);
      m = ordered_json::parse(in, nullptr, false);
      if (m.is_discarded()) m = ordered_json::object();
    }
    m["config_hash"] = config_hash(cfg);
    m["version"] = kVersion;
    ordered_json entry;
    entry["artifacts"] = res.artifacts;
    entry["wall_time_s"] = res.wall_time_s;
    entry["cache_hit"] = false;
    m["stages"]["report"] = std::move(entry);
    std::ofstream out(mp, std::ios::binary);
    out << m.dump(2) << "\n";
  }
  return res;
}

}  // namespace nnmpc
