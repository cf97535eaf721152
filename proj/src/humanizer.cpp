#include "mtc/humanizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

namespace mtc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::pair<double, double> parse_pair(const std::string& v, int line) {
  const auto comma = v.find(',');
  if (comma == std::string::npos) {
    throw IoError("histogram line " + std::to_string(line) + ": expected 'low,high'");
  }
  return {std::stod(v.substr(0, comma)), std::stod(v.substr(comma + 1))};
}

// Pick a bin index by mass with one uniform draw.
std::size_t pick_bin(const std::vector<HistogramBin>& bins, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    acc += bins[i].mass;
    if (u < acc) return i;
  }
  // u landed in the rounding slack; take the last bin with mass
  for (std::size_t i = bins.size(); i-- > 0;) {
    if (bins[i].mass > 0) return i;
  }
  return bins.size() - 1;
}

}  // namespace

double AccelEventModel::magnitude_cap() const {
  double cap = 0.0;
  for (const auto& b : bins) cap = std::max({cap, std::abs(b.low), std::abs(b.high)});
  return cap;
}

double AccelEventModel::nominal_mass() const {
  double m = 0.0;
  for (const auto& b : bins) {
    const double lo = std::max(b.low, nominal_low);
    const double hi = std::min(b.high, nominal_high);
    if (hi > lo && b.high > b.low) m += b.mass * (hi - lo) / (b.high - b.low);
  }
  return m;
}

void AccelEventModel::validate() const {
  if (bins.empty()) throw IoError("histogram: no bins");
  double total = 0.0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const auto& b = bins[i];
    if (!(b.high > b.low)) {
      throw IoError("histogram bin " + std::to_string(i) + ": high must exceed low");
    }
    if (!(b.mass >= 0)) throw IoError("histogram bin " + std::to_string(i) + ": negative mass");
    if (i > 0 && b.low < bins[i - 1].high) {
      throw IoError("histogram bin " + std::to_string(i) + ": bins overlap or are unordered");
    }
    total += b.mass;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "histogram: masses sum to %.12g, expected 1", total);
    throw IoError(buf);
  }
  if (!(duration_min > 0 && duration_max >= duration_min)) {
    throw ConfigError("histogram: invalid duration range");
  }
  if (!(gap_min > 0 && gap_max >= gap_min)) throw ConfigError("histogram: invalid gap range");
  if (!(magnitude_duration_exponent > 0)) throw ConfigError("histogram: exponent must be > 0");
  if (!(duration_jitter >= 0 && duration_jitter < 1)) {
    throw ConfigError("histogram: jitter must be in [0, 1)");
  }
  if (!(nominal_low < nominal_high)) throw ConfigError("histogram: invalid nominal band");
}

AccelEventModel default_accel_model() {
  AccelEventModel m;
  // 0.5 m/s^2 bins on [-4, 4]; symmetric masses.
  const double half[8] = {0.095, 0.09, 0.07, 0.04, 0.035, 0.04, 0.07, 0.06};
  for (int i = 7; i >= 0; --i) {
    m.bins.push_back({-0.5 * (i + 1), -0.5 * i, half[i]});
  }
  for (int i = 0; i < 8; ++i) {
    m.bins.push_back({0.5 * i, 0.5 * (i + 1), half[i]});
  }
  return m;
}

AccelEventModel parse_accel_histogram(const std::string& text) {
  AccelEventModel m;
  m.bins.clear();
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s[0] == '#') {
      const auto eq = s.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(s.substr(1, eq - 1));
      const std::string val = trim(s.substr(eq + 1));
      try {
        if (key == "duration_range") {
          std::tie(m.duration_min, m.duration_max) = parse_pair(val, line);
        } else if (key == "gap_range") {
          std::tie(m.gap_min, m.gap_max) = parse_pair(val, line);
        } else if (key == "nominal_band") {
          std::tie(m.nominal_low, m.nominal_high) = parse_pair(val, line);
        } else if (key == "exponent") {
          m.magnitude_duration_exponent = std::stod(val);
        } else if (key == "jitter") {
          m.duration_jitter = std::stod(val);
        }
      } catch (const std::invalid_argument&) {
        throw IoError("histogram line " + std::to_string(line) + ": bad value for " + key);
      }
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(s[0]))) continue;  // header
    std::array<double, 3> f{};
    std::istringstream row(s);
    std::string cell;
    int n = 0;
    while (std::getline(row, cell, ',') && n < 4) {
      if (n < 3) {
        try {
          f[n] = std::stod(cell);
        } catch (const std::exception&) {
          throw IoError("histogram line " + std::to_string(line) + ": not a number: '" +
                        trim(cell) + "'");
        }
      }
      ++n;
    }
    if (n != 3) {
      throw IoError("histogram line " + std::to_string(line) + ": expected 3 columns");
    }
    HistogramBin b{f[0], f[1], f[2]};
    if (!(b.high > b.low)) {
      throw IoError("histogram line " + std::to_string(line) + ": bin_high <= bin_low");
    }
    if (!m.bins.empty() && b.low < m.bins.back().high) {
      throw IoError("histogram line " + std::to_string(line) + ": bins unordered or overlapping");
    }
    if (b.mass < 0) throw IoError("histogram line " + std::to_string(line) + ": negative mass");
    m.bins.push_back(b);
  }
  m.validate();
  return m;
}

AccelEventModel load_accel_histogram(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open histogram file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_accel_histogram(ss.str());
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string format_accel_histogram(const AccelEventModel& model) {
  // shortest round-trip text
  auto num = [](double x) {
    char buf[32];
    if (x == 0.0) x = 0.0;
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
  };
  std::string out;
  out += "# duration_range=" + num(model.duration_min) + "," + num(model.duration_max) + "\n";
  out += "# gap_range=" + num(model.gap_min) + "," + num(model.gap_max) + "\n";
  out += "# nominal_band=" + num(model.nominal_low) + "," + num(model.nominal_high) + "\n";
  out += "# exponent=" + num(model.magnitude_duration_exponent) + "\n";
  out += "# jitter=" + num(model.duration_jitter) + "\n";
  out += "bin_low,bin_high,mass\n";
  for (const auto& b : model.bins) out += num(b.low) + "," + num(b.high) + "," + num(b.mass) + "\n";
  return out;
}

void save_accel_histogram(const AccelEventModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write histogram file '" + path + "'");
  f << format_accel_histogram(model);
}

std::vector<HistogramBin> out_of_band_bins(const AccelEventModel& model) {
  std::vector<HistogramBin> out;
  double total = 0.0;
  for (const auto& b : model.bins) {
    const double width = b.high - b.low;
    // portion below the band
    if (b.low < model.nominal_low) {
      const double hi = std::min(b.high, model.nominal_low);
      const double m = b.mass * (hi - b.low) / width;
      if (m > 0) out.push_back({b.low, hi, m});
      total += m;
    }
    // portion above the band
    if (b.high > model.nominal_high) {
      const double lo = std::max(b.low, model.nominal_high);
      const double m = b.mass * (b.high - lo) / width;
      if (m > 0) out.push_back({lo, b.high, m});
      total += m;
    }
  }
  if (!(total > 0)) return {};
  for (auto& b : out) b.mass /= total;
  return out;
}

double nominal_event_duration(const AccelEventModel& model, double abs_magnitude) {
  const double cap = model.magnitude_cap();
  const double edge = std::max(std::abs(model.nominal_low), std::abs(model.nominal_high));
  if (cap <= edge) return model.duration_min;
  const double x = std::clamp((cap - abs_magnitude) / (cap - edge), 0.0, 1.0);
  return model.duration_min + (model.duration_max - model.duration_min) *
                                  std::pow(x, model.magnitude_duration_exponent);
}

EventSample sample_event(const AccelEventModel& model, Rng& rng) {
  const auto bins = out_of_band_bins(model);
  if (bins.empty()) throw ConfigError("sample_event: histogram has no out-of-band mass");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  EventSample s;
  const auto& b = bins[pick_bin(bins, unit(rng))];
  do {
    s.magnitude = b.low + (b.high - b.low) * unit(rng);
  } while (s.magnitude >= model.nominal_low && s.magnitude <= model.nominal_high);
  const double jitter = 1.0 + model.duration_jitter * (2.0 * unit(rng) - 1.0);
  s.duration = std::clamp(nominal_event_duration(model, std::abs(s.magnitude)) * jitter,
                          model.duration_min, model.duration_max);
  s.gap_to_next = model.gap_min + (model.gap_max - model.gap_min) * unit(rng);
  return s;
}

double sample_acceleration(const AccelEventModel& model, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& b = model.bins[pick_bin(model.bins, unit(rng))];
  return b.low + (b.high - b.low) * unit(rng);
}

std::vector<AccelEvent> schedule_events(const AccelEventModel& model, int vehicle_id,
                                        double t_begin, double t_end, Rng& rng) {
  std::vector<AccelEvent> events;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Random phase so vehicles do not fire in lockstep.
  EventSample s = sample_event(model, rng);
  double t = t_begin + unit(rng) * s.gap_to_next;
  while (t < t_end) {
    // A new event preempts the previous one.
    events.push_back({vehicle_id, t, std::min(s.duration, s.gap_to_next), s.magnitude});
    t += s.gap_to_next;
    s = sample_event(model, rng);
  }
  return events;
}

double apply_human_accel(bool is_rv, const std::optional<AccelEvent>& event,
                         double model_command) {
  if (is_rv) throw DomainError("apply_human_accel: humanizer only drives human vehicles");
  return event ? event->magnitude : model_command;
}

}  // namespace mtc
