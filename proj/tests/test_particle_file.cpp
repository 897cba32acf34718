#include <doctest.h>

#include <cmath>
#include <sstream>

#include "../tools/particle_file.hpp"
#include "qfmm/error.hpp"

using namespace qfmm;
using namespace qfmm::cli;

TEST_CASE("particle file round trip") {
  GenOptions g;
  g.eta = 50;
  g.d = 2;
  g.n_bits = 4;
  g.seed = 9;
  g.charges = "mixed";
  const auto f = generate(g);
  std::stringstream ss;
  write_particles(ss, f);
  const auto back = read_particles(ss);
  CHECK(back.d == 2);
  CHECK(back.n_bits == 4);
  CHECK(back.seed == std::optional<std::uint64_t>(9));
  REQUIRE(back.particles.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(back.particles[i].pos == f.particles[i].pos);
    CHECK(back.particles[i].charge == f.particles[i].charge);
    CHECK(back.particles[i].id == f.particles[i].id);
  }
  std::stringstream again;
  write_particles(again, generate(g));
  std::stringstream first;
  write_particles(first, f);
  CHECK(first.str() == again.str());
}

TEST_CASE("particle file errors") {
  auto bad = [](const std::string& text) {
    std::stringstream ss(text);
    try {
      read_particles(ss);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::Input;
    }
    return false;
  };
  const std::string head = "#format=qfmm-particles,version=1,d=1,n_bits=3,count=";
  CHECK(bad("id,x,charge\n"));
  CHECK(bad(head + "1\nid,x,charge\n0,8,-1\n"));
  CHECK(bad(head + "2\nid,x,charge\n0,1,-1\n0,2,-1\n"));
  CHECK(bad(head + "2\nid,x,charge\n0,1,-1\n"));
  CHECK(bad(head + "1\nid,x,charge\n0,1\n"));
  CHECK(bad(head + "1\nid,x,charge\n0,one,-1\n"));
  CHECK(bad("#format=qfmm-particles,version=2,d=1,n_bits=3,count=0\nid,x,charge\n"));
  std::stringstream empty(head + "0\nid,x,charge\n");
  CHECK(read_particles(empty).particles.empty());
}

TEST_CASE("generators") {
  GenOptions g;
  g.n_bits = 2;
  g.eta = 65;
  CHECK_THROWS_AS(generate(g), Error);
  g.eta = 0;
  CHECK(generate(g).particles.empty());

  g.dist = Distribution::Clustered;
  g.n_bits = 7;
  g.eta = 400;
  g.blobs = 2;
  g.seed = 4;
  const auto f = generate(g);
  CHECK(f.particles.size() == 400);
  REQUIRE(f.blob_centres.size() == 2);
  std::size_t inside = 0;
  for (const auto& p : f.particles) {
    for (const auto& c : f.blob_centres) {
      double s2 = 0.0;
      for (int a = 0; a < 3; ++a) s2 += std::pow(double(p.pos[a]) - c[a], 2);
      if (std::sqrt(s2) <= blob_radius(7)) {
        ++inside;
        break;
      }
    }
  }
  CHECK(inside >= 360);

  g.dist = Distribution::Shell;
  g.eta = 100;
  g.n_bits = 6;
  for (const auto& p : generate(g).particles) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += std::pow(double(p.pos[a]) - 31.5, 2);
    CHECK(std::abs(std::sqrt(s) - 64.0 / 3.0) < 2.0);
  }
}
