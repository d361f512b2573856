#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "snspd/optics.hpp"
#include "snspd/photon_sim.hpp"
#include "snspd/readout.hpp"
#include "snspd/rfcircuit.hpp"
#include "snspd/timing.hpp"

/// CSV readers and writers. Every file starts with a fixed header row; numbers
/// are written in shortest round-trip form so reruns are byte-identical.
namespace snspd::io {

// trial_id,prepared,bin_index,counts
void write_trajectories(std::ostream& os, const std::vector<sim::Trajectory>& trials);
std::vector<sim::Trajectory> read_trajectories(std::istream& is, const std::string& source = "<stream>");

// channel,t_ns
void write_timetags(std::ostream& os, const std::vector<timing::TimeTagStream>& streams);
/// Streams keyed by channel. Each duration is one past the latest tag of any
/// channel unless duration_ns > 0 is given.
std::map<std::string, timing::TimeTagStream> read_timetags(std::istream& is,
                                                           const std::string& source = "<stream>",
                                                           std::int64_t duration_ns = 0);

// trial_id,truth,decision,duration_us,confidence
struct ResultRow {
  std::uint64_t trial_id{0};
  sim::State truth{sim::State::Bright};
  readout::ClassifierResult result;
};
void write_results(std::ostream& os, const std::vector<ResultRow>& rows);

// bias_uA,counts
void write_bias_curve(std::ostream& os, const rf::BiasCountCurve& c);
rf::BiasCountCurve read_bias_curve(std::istream& is, const std::string& source = "<stream>");

// polarization,theta_deg,phi_deg,ap
void write_ap_surface(std::ostream& os, const optics::APSurface& s);
optics::APSurface read_ap_surface(std::istream& is, const std::string& source = "<stream>");

// delay_ns,g2,ci_low,ci_high,masked
void write_g2(std::ostream& os, const timing::G2Estimate& est);

// I0_uA,I1_uA,residual_norm,I0_err_uA,I1_err_uA
void write_fit_report(std::ostream& os, const rf::PickupFit& fit);

/// Opens for reading; a missing file is a ValidationError naming `what`.
std::ifstream open_input(const std::filesystem::path& p, const std::string& what);
/// Opens for writing, creating parent directories.
std::ofstream open_output(const std::filesystem::path& p);

/// Splits one CSV line on commas and trims blanks around each field.
std::vector<std::string> split_csv(const std::string& line);
double parse_double(const std::string& field, const std::string& where);
std::int64_t parse_int(const std::string& field, const std::string& where);

}  // namespace snspd::io
