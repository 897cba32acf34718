#include "particle_file.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "qfmm/error.hpp"

namespace qfmm::cli {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <class T>
T parse_number(const std::string& text, const std::string& what, std::size_t line) {
  std::istringstream is(text);
  T v{};
  if (!(is >> v) || !(is >> std::ws).eof()) {
    std::ostringstream os;
    os << "line " << line << ": cannot parse " << what << " '" << text << "'";
    fail(ErrorKind::Input, os.str());
  }
  return v;
}

const char* axis_name(int a) { return a == 0 ? "x" : a == 1 ? "y" : "z"; }

}  // namespace

void write_particles(std::ostream& os, const ParticleFile& f) {
  os << "#format=qfmm-particles,version=1,d=" << f.d << ",n_bits=" << f.n_bits
     << ",count=" << f.particles.size() << ",charges=" << f.charges;
  if (!f.distribution.empty()) os << ",distribution=" << f.distribution;
  if (f.seed) os << ",seed=" << *f.seed;
  os << "\nid";
  for (int a = 0; a < f.d; ++a) os << ',' << axis_name(a);
  os << ",charge\n";
  for (const auto& p : f.particles) {
    os << p.id;
    for (int a = 0; a < f.d; ++a) os << ',' << p.pos[a];
    os << ',' << p.charge << '\n';
  }
}

ParticleFile read_particles(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("#format=", 0) != 0) {
    fail(ErrorKind::Input, "missing '#format=' header line");
  }
  std::map<std::string, std::string> header;
  for (const auto& field : split(line.substr(1), ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Input, "malformed header field '" + field + "'");
    header[field.substr(0, eq)] = field.substr(eq + 1);
  }
  if (header["format"] != "qfmm-particles") fail(ErrorKind::Input, "not a qfmm-particles file");
  if (header["version"] != "1") fail(ErrorKind::Input, "unsupported version '" + header["version"] + "'");
  for (const char* key : {"d", "n_bits", "count"}) {
    if (!header.count(key)) fail(ErrorKind::Input, std::string("header lacks ") + key);
  }
  ParticleFile f;
  f.d = parse_number<int>(header["d"], "d", 1);
  f.n_bits = parse_number<int>(header["n_bits"], "n_bits", 1);
  if (f.d < 1 || f.d > 3) fail(ErrorKind::Input, "d must be 1, 2 or 3");
  if (f.n_bits < 0 || f.d * f.n_bits > 63) fail(ErrorKind::Input, "n_bits out of range");
  const auto count = parse_number<std::size_t>(header["count"], "count", 1);
  if (header.count("charges")) f.charges = header["charges"];
  if (header.count("distribution")) f.distribution = header["distribution"];
  if (header.count("seed")) f.seed = parse_number<std::uint64_t>(header["seed"], "seed", 1);

  if (!std::getline(is, line)) fail(ErrorKind::Input, "missing column header");
  const GridSpec spec = f.spec();
  std::set<std::int64_t> ids;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != static_cast<std::size_t>(f.d) + 2) {
      std::ostringstream os;
      os << "line " << lineno << ": expected " << f.d + 2 << " columns, found " << cols.size();
      fail(ErrorKind::Input, os.str());
    }
    ParticleRecord p;
    p.id = parse_number<std::int64_t>(cols[0], "id", lineno);
    for (int a = 0; a < f.d; ++a) {
      const auto v = parse_number<long long>(cols[a + 1], axis_name(a), lineno);
      if (v < 0 || v >= static_cast<long long>(spec.side())) {
        std::ostringstream os;
        os << "line " << lineno << ": coordinate " << v << " outside [0, " << spec.side() << ")";
        fail(ErrorKind::Input, os.str());
      }
      p.pos[a] = static_cast<Coord>(v);
    }
    p.charge = parse_number<double>(cols[f.d + 1], "charge", lineno);
    if (!ids.insert(p.id).second) {
      std::ostringstream os;
      os << "line " << lineno << ": duplicate id " << p.id;
      fail(ErrorKind::Input, os.str());
    }
    f.particles.push_back(p);
  }
  if (f.particles.size() != count) {
    std::ostringstream os;
    os << "header says " << count << " particles, file has " << f.particles.size();
    fail(ErrorKind::Input, os.str());
  }
  return f;
}

ParticleFile read_particles(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Input, "cannot open '" + path + "'");
  return read_particles(in);
}

Distribution parse_distribution(const std::string& name) {
  if (name == "uniform") return Distribution::Uniform;
  if (name == "clustered") return Distribution::Clustered;
  if (name == "shell") return Distribution::Shell;
  fail(ErrorKind::Input, "unknown distribution '" + name + "'");
}

double blob_radius(int n_bits) { return 3.0 * std::ldexp(1.0, n_bits) / 16.0; }

ParticleFile generate(const GenOptions& opt) {
  ParticleFile f;
  f.d = opt.d;
  f.n_bits = opt.n_bits;
  f.charges = opt.charges;
  f.seed = opt.seed;
  const GridSpec spec = f.spec();
  if (opt.eta > spec.total_points()) {
    std::ostringstream os;
    os << "cannot place " << opt.eta << " distinct particles on " << spec.total_points() << " grid points";
    fail(ErrorKind::Input, os.str());
  }
  if (opt.charges != "electrons" && opt.charges != "mixed" && opt.charges != "zero") {
    fail(ErrorKind::Input, "charges must be electrons, mixed or zero");
  }
  std::mt19937_64 rng(opt.seed);
  const double side = static_cast<double>(spec.side());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, side / 16.0);
  auto clamp = [&](double v) {
    return static_cast<Coord>(std::min(side - 1.0, std::max(0.0, std::round(v))));
  };

  std::vector<Vec3> centres;
  switch (opt.dist) {
    case Distribution::Uniform: f.distribution = "uniform"; break;
    case Distribution::Clustered:
      f.distribution = "clustered";
      if (opt.blobs < 1) fail(ErrorKind::Input, "need at least one blob");
      for (int b = 0; b < opt.blobs; ++b) {
        Vec3 c{};
        for (int a = 0; a < opt.d; ++a) c[a] = side * (0.2 + 0.6 * unit(rng));
        centres.push_back(c);
      }
      break;
    case Distribution::Shell: f.distribution = "shell"; break;
  }

  std::set<GridPoint> used;
  std::uint64_t attempts = 0;
  const std::uint64_t max_attempts = 1000 * (opt.eta + 16);
  while (f.particles.size() < opt.eta) {
    if (++attempts > max_attempts) fail(ErrorKind::Input, "distribution too narrow for the requested count");
    GridPoint p{};
    if (opt.dist == Distribution::Uniform) {
      for (int a = 0; a < opt.d; ++a) p[a] = static_cast<Coord>(rng() % spec.side());
    } else if (opt.dist == Distribution::Clustered) {
      const Vec3& c = centres[rng() % centres.size()];
      for (int a = 0; a < opt.d; ++a) p[a] = clamp(c[a] + gauss(rng));
    } else {
      Vec3 dir{};
      double norm = 0.0;
      for (int a = 0; a < opt.d; ++a) {
        dir[a] = std::normal_distribution<double>(0.0, 1.0)(rng);
        norm += dir[a] * dir[a];
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      const double r = side / 3.0 + (unit(rng) - 0.5);
      for (int a = 0; a < opt.d; ++a) p[a] = clamp((side - 1.0) / 2.0 + r * dir[a] / norm);
    }
    if (!used.insert(p).second) continue;
    double q = -1.0;
    if (opt.charges == "mixed") q = (rng() % 3 == 0) ? 2.0 : -1.0;
    if (opt.charges == "zero") q = 0.0;
    f.particles.push_back({p, q, static_cast<std::int64_t>(f.particles.size())});
  }
  f.blob_centres = std::move(centres);
  return f;
}

}  // namespace qfmm::cli
