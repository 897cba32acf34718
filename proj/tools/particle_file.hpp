#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qfmm/grid_tree.hpp"

namespace qfmm::cli {

struct ParticleFile {
  int d = 3;
  int n_bits = 5;
  std::string charges = "electrons";  // electrons | mixed | zero
  std::optional<std::uint64_t> seed;
  std::string distribution;
  std::vector<ParticleRecord> particles;
  std::vector<Vec3> blob_centres;  // clustered generation only, not written

  GridSpec spec() const { return GridSpec(d, n_bits); }
};

/// `#format=qfmm-particles,version=1,...` header line, then `id,x[,y,z],charge` rows.
void write_particles(std::ostream& os, const ParticleFile& f);
/// Throws Input on malformed headers, rows, duplicate ids or out-of-range coordinates.
ParticleFile read_particles(std::istream& is);
ParticleFile read_particles(const std::string& path);

enum class Distribution { Uniform, Clustered, Shell };
Distribution parse_distribution(const std::string& name);

struct GenOptions {
  Distribution dist = Distribution::Uniform;
  std::size_t eta = 0;
  int d = 3;
  int n_bits = 5;
  std::uint64_t seed = 1;
  int blobs = 2;
  std::string charges = "electrons";
};

/// Distinct grid points from mt19937_64. Clustered points are Gaussian blobs
/// of width side/16 around uniform centres; shell points lie within one unit
/// of a sphere of radius side/3 about the cell centre.
ParticleFile generate(const GenOptions& opt);

/// Radius that holds almost every clustered point: three blob widths.
double blob_radius(int n_bits);

}  // namespace qfmm::cli
