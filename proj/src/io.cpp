#include "snspd/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "snspd/errors.hpp"

namespace snspd::io {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Reads the header and checks it, then yields data rows with their line
/// numbers. Blank lines are skipped.
class CsvReader {
 public:
  CsvReader(std::istream& is, std::string source, std::vector<std::string> header)
      : is_(is), source_(std::move(source)) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (!trim(line).empty()) break;
    }
    if (split_csv(line) != header) {
      throw ValidationError(fmt::format("{}: expected header '{}'", source_, fmt::join(header, ",")));
    }
    width_ = header.size();
  }

  bool next(std::vector<std::string>& row) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (trim(line).empty()) continue;
      row = split_csv(line);
      if (row.size() != width_) {
        throw ValidationError(fmt::format("{}: expected {} fields", where(), width_));
      }
      return true;
    }
    return false;
  }

  std::string where() const { return fmt::format("{}:{}", source_, line_no_); }

 private:
  std::istream& is_;
  std::string source_;
  std::size_t width_{0};
  std::size_t line_no_{0};
};

void flush(std::ostream& os, fmt::memory_buffer& buf) {
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  buf.clear();
}

}  // namespace

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto r = std::from_chars(field.data(), end, v);
  if (r.ec != std::errc{} || r.ptr != end || !std::isfinite(v)) {
    throw ValidationError(fmt::format("{}: '{}' is not a finite number", where, field));
  }
  return v;
}

std::int64_t parse_int(const std::string& field, const std::string& where) {
  std::int64_t v = 0;
  const auto* end = field.data() + field.size();
  const auto r = std::from_chars(field.data(), end, v);
  if (r.ec != std::errc{} || r.ptr != end) {
    throw ValidationError(fmt::format("{}: '{}' is not an integer", where, field));
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& p, const std::string& what) {
  std::ifstream f(p);
  if (!f) throw ValidationError(fmt::format("{}: cannot open '{}'", what, p.string()));
  return f;
}

std::ofstream open_output(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError(fmt::format("cannot write '{}'", p.string()));
  return f;
}

void write_trajectories(std::ostream& os, const std::vector<sim::Trajectory>& trials) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "trial_id,prepared,bin_index,counts\n");
  for (const auto& t : trials) {
    const char* label = sim::to_string(t.prepared);
    for (std::size_t i = 0; i < t.bins.size(); ++i) {
      fmt::format_to(std::back_inserter(buf), "{},{},{},{}\n", t.trial_id, label, i, t.bins[i]);
    }
    if (buf.size() > (1u << 20)) flush(os, buf);
  }
  flush(os, buf);
}

std::vector<sim::Trajectory> read_trajectories(std::istream& is, const std::string& source) {
  CsvReader r(is, source, {"trial_id", "prepared", "bin_index", "counts"});
  std::vector<sim::Trajectory> out;
  std::vector<std::size_t> filled;
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<std::string> row;
  while (r.next(row)) {
    const auto w = r.where();
    const auto id = parse_int(row[0], w);
    const auto bin = parse_int(row[2], w);
    const auto counts = parse_int(row[3], w);
    if (id < 0 || bin < 0) throw ValidationError(fmt::format("{}: negative id or bin", w));
    if (counts < 0 || counts > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError(fmt::format("{}: counts out of range", w));
    }
    const auto state = sim::state_from_string(row[1]);
    auto [it, fresh] = index.emplace(static_cast<std::uint64_t>(id), out.size());
    if (fresh) {
      out.push_back({static_cast<std::uint64_t>(id), state, {}, {}});
      filled.push_back(0);
    }
    auto& t = out[it->second];
    if (t.prepared != state) throw ValidationError(fmt::format("{}: trial {} changes label", w, id));
    const auto b = static_cast<std::size_t>(bin);
    if (t.bins.size() <= b) t.bins.resize(b + 1, std::numeric_limits<std::uint16_t>::max());
    else if (t.bins[b] != std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError(fmt::format("{}: trial {} repeats bin {}", w, id, bin));
    }
    t.bins[b] = static_cast<std::uint16_t>(counts);
    ++filled[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (filled[i] != out[i].bins.size()) {
      throw ValidationError(fmt::format("{}: trial {} has missing bins", source, out[i].trial_id));
    }
  }
  return out;
}

void write_timetags(std::ostream& os, const std::vector<timing::TimeTagStream>& streams) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "channel,t_ns\n");
  for (const auto& s : streams) {
    for (auto t : s.tags_ns) {
      fmt::format_to(std::back_inserter(buf), "{},{}\n", s.channel, t);
      if (buf.size() > (1u << 20)) flush(os, buf);
    }
  }
  flush(os, buf);
}

std::map<std::string, timing::TimeTagStream> read_timetags(std::istream& is, const std::string& source,
                                                           std::int64_t duration_ns) {
  CsvReader r(is, source, {"channel", "t_ns"});
  std::map<std::string, timing::TimeTagStream> out;
  std::vector<std::string> row;
  std::int64_t latest = -1;
  while (r.next(row)) {
    if (row[0].empty()) throw ValidationError(fmt::format("{}: empty channel name", r.where()));
    const auto t = parse_int(row[1], r.where());
    if (t < 0) throw ValidationError(fmt::format("{}: negative time tag", r.where()));
    auto& s = out[row[0]];
    s.channel = row[0];
    if (!s.tags_ns.empty() && t < s.tags_ns.back()) {
      throw ValidationError(fmt::format("{}: tags of channel {} are not sorted", r.where(), row[0]));
    }
    s.tags_ns.push_back(t);
    latest = std::max(latest, t);
  }
  if (duration_ns > 0 && latest >= duration_ns) {
    throw ValidationError(fmt::format("{}: tag {} beyond duration {}", source, latest, duration_ns));
  }
  for (auto& [name, s] : out) s.duration_ns = duration_ns > 0 ? duration_ns : latest + 1;
  return out;
}

void write_results(std::ostream& os, const std::vector<ResultRow>& rows) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "trial_id,truth,decision,duration_us,confidence\n");
  for (const auto& r : rows) {
    fmt::format_to(std::back_inserter(buf), "{},{},{},{},{}\n", r.trial_id, sim::to_string(r.truth),
                   sim::to_string(r.result.decision), r.result.duration_us, r.result.confidence);
    if (buf.size() > (1u << 20)) flush(os, buf);
  }
  flush(os, buf);
}

void write_bias_curve(std::ostream& os, const rf::BiasCountCurve& c) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "bias_uA,counts\n");
  for (std::size_t i = 0; i < c.bias_uA().size(); ++i) {
    fmt::format_to(std::back_inserter(buf), "{},{}\n", c.bias_uA()[i], c.counts()[i]);
  }
  flush(os, buf);
}

rf::BiasCountCurve read_bias_curve(std::istream& is, const std::string& source) {
  CsvReader r(is, source, {"bias_uA", "counts"});
  std::vector<double> b, c;
  std::vector<std::string> row;
  while (r.next(row)) {
    b.push_back(parse_double(row[0], r.where()));
    c.push_back(parse_double(row[1], r.where()));
  }
  try {
    return {b, c};
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", source, e.what()));
  }
}

void write_ap_surface(std::ostream& os, const optics::APSurface& s) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "polarization,theta_deg,phi_deg,ap\n");
  for (const auto& r : s.rows()) {
    fmt::format_to(std::back_inserter(buf), "{},{},{},{}\n", optics::to_string(r.pol), r.theta_deg,
                   r.phi_deg, r.ap);
  }
  flush(os, buf);
}

optics::APSurface read_ap_surface(std::istream& is, const std::string& source) {
  CsvReader r(is, source, {"polarization", "theta_deg", "phi_deg", "ap"});
  std::vector<optics::APSurface::Row> rows;
  std::vector<std::string> row;
  while (r.next(row)) {
    rows.push_back({optics::polarization_from_string(row[0]), parse_double(row[1], r.where()),
                    parse_double(row[2], r.where()), parse_double(row[3], r.where())});
  }
  try {
    return optics::APSurface::from_rows(rows);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", source, e.what()));
  }
}

void write_g2(std::ostream& os, const timing::G2Estimate& est) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "delay_ns,g2,ci_low,ci_high,masked\n");
  for (const auto& b : est.bins) {
    fmt::format_to(std::back_inserter(buf), "{},{},{},{},{}\n", b.delay_ns, b.g2, b.ci_low, b.ci_high,
                   b.masked ? 1 : 0);
  }
  flush(os, buf);
}

void write_fit_report(std::ostream& os, const rf::PickupFit& fit) {
  os << fmt::format("I0_uA,I1_uA,residual_norm,I0_err_uA,I1_err_uA\n{},{},{},{},{}\n", fit.model.I0_uA,
                    fit.model.I1_uA, fit.residual_norm, fit.I0_err_uA, fit.I1_err_uA);
}

}  // namespace snspd::io
