#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "qfmm/error.hpp"
#include "qfmm/grid_tree.hpp"

using namespace qfmm;

namespace {

// Reference interleave written bit by bit from the stated convention.
MortonKey slow_key(const GridPoint& p, int d, int bits) {
  MortonKey k = 0;
  int pos = d * bits - 1;
  for (int b = bits - 1; b >= 0; --b) {
    for (int a = 0; a < d; ++a, --pos) {
      if ((p[a] >> b) & 1u) k |= MortonKey{1} << pos;
    }
  }
  return k;
}

std::vector<BoxId> all_boxes(int d, int level) {
  std::vector<BoxId> out;
  for (MortonKey k = 0; k < boxes_at_level(d, level); ++k) out.push_back(box_from_key(d, level, k));
  return out;
}

}  // namespace

TEST_CASE("morton encode examples") {
  CHECK(morton_encode({0, 0, 0}, GridSpec(2, 2)) == 0);
  CHECK(morton_encode({2, 3, 0}, GridSpec(2, 2)) == 13);
  CHECK(morton_encode({3, 3, 0}, GridSpec(2, 3)) == 15);
  CHECK(morton_encode({4, 4, 0}, GridSpec(2, 3)) == 48);
  CHECK(morton_decode(13, GridSpec(2, 2)) == GridPoint{2, 3, 0});
  CHECK(morton_decode(63, GridSpec(2, 3)) == GridPoint{7, 7, 0});
  CHECK(morton_decode(0, GridSpec(2, 3)) == GridPoint{0, 0, 0});
}

TEST_CASE("morton errors") {
  CHECK_THROWS_AS(morton_encode({4, 0, 0}, GridSpec(2, 2)), Error);
  CHECK_THROWS_AS(morton_decode(16, GridSpec(2, 2)), Error);
  CHECK_THROWS_AS(GridSpec(4, 2), Error);
  try {
    morton_encode({0, 9, 0}, GridSpec(2, 3));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Domain);
  }
}

TEST_CASE("morton round trip and bijection, exhaustive for small grids") {
  for (int d = 1; d <= 3; ++d) {
    for (int n = 0; n <= 4; ++n) {
      if (d == 3 && n == 4) continue;
      GridSpec spec(d, n);
      std::vector<bool> seen(spec.total_points(), false);
      for (MortonKey k = 0; k < spec.total_points(); ++k) {
        const GridPoint p = morton_decode(k, spec);
        REQUIRE(spec.contains(p));
        REQUIRE(morton_encode(p, spec) == k);
        REQUIRE(slow_key(p, d, n) == k);
        REQUIRE_FALSE(seen[k]);
        seen[k] = true;
      }
    }
  }
}

TEST_CASE("morton keys group boxes") {
  for (int d = 1; d <= 3; ++d) {
    GridSpec spec(d, d == 3 ? 3 : 4);
    for (MortonKey kp = 0; kp < spec.total_points(); ++kp) {
      const GridPoint p = morton_decode(kp, spec);
      for (MortonKey kq = 0; kq < spec.total_points(); kq += 7) {
        const GridPoint q = morton_decode(kq, spec);
        for (int m = 0; m <= spec.n_bits(); ++m) {
          bool same = true;
          for (int a = 0; a < d; ++a) same = same && (p[a] >> m) == (q[a] >> m);
          if (same) REQUIRE((kp >> (d * m)) == (kq >> (d * m)));
        }
      }
    }
  }
}

TEST_CASE("shifted morton keys") {
  GridSpec s1(1, 3);
  CHECK(shifted_morton_key({4, 0, 0}, ShiftVector{{2, 0, 0}}, 3, s1) == 6);
  CHECK(shifted_morton_key({7, 0, 0}, ShiftVector{{2, 0, 0}}, 3, s1) == 1);
  GridSpec s2(2, 3);
  const ShiftVector z{{2, 2, 0}};
  const MortonKey mp = shifted_morton_key({3, 3, 0}, z, 3, s2);
  const MortonKey mq = shifted_morton_key({4, 4, 0}, z, 3, s2);
  CHECK(mp == 51);
  CHECK(mq == 60);
  for (MortonKey k = 0; k < s2.total_points(); ++k) {
    const GridPoint p = morton_decode(k, s2);
    for (int lb = 0; lb <= 3; ++lb) CHECK(shifted_morton_key(p, ShiftVector{}, lb, s2) == k);
  }
  CHECK_THROWS_AS(shifted_morton_key({0, 0, 0}, ShiftVector{{1, 0, 0}}, 3, s2), Error);
  CHECK_THROWS_AS(shifted_morton_key({0, 0, 0}, ShiftVector{{0, 0, 2}}, 3, s2), Error);
}

TEST_CASE("all shifts") {
  for (int d = 1; d <= 3; ++d) {
    const auto z = all_shifts(d);
    CHECK(z.size() == (1u << d));
    std::set<std::array<Coord, 3>> distinct;
    for (const auto& s : z) distinct.insert(s.z);
    CHECK(distinct.size() == z.size());
    CHECK(z.front() == ShiftVector{});
  }
  CHECK(all_shifts(3)[4].z == std::array<Coord, 3>{2, 0, 0});
}

TEST_CASE("parent, children, neighbours") {
  const BoxId root = make_box(3, 1, {0, 0, 0});
  CHECK(children(root).size() == 8);
  CHECK_THROWS_AS(parent(root), Error);
  const BoxId interior = make_box(3, 4, {3, 4, 5});
  CHECK(nearest_neighbors(interior).size() == 26);
  CHECK(nearest_neighbors(make_box(2, 3, {0, 0, 0})).size() == 3);
  CHECK(nearest_neighbors(make_box(3, 3, {0, 0, 0})).size() == 7);
  CHECK(nearest_neighbors(make_box(1, 3, {3, 0, 0})).size() == 1);
  for (int d = 1; d <= 3; ++d) {
    for (int level = 2; level <= 4; ++level) {
      for (const BoxId& b : all_boxes(d, level)) {
        const auto kids = children(parent(b));
        REQUIRE(std::find(kids.begin(), kids.end(), b) != kids.end());
        for (std::size_t i = 1; i < kids.size(); ++i) REQUIRE(box_key(kids[i - 1]) < box_key(kids[i]));
        const auto nn = nearest_neighbors(b);
        REQUIRE(nn.size() <= static_cast<std::size_t>(std::pow(3, d)) - 1);
        for (const BoxId& n : nn) REQUIRE(are_neighbors(n, b));
      }
    }
  }
}

TEST_CASE("interaction lists") {
  CHECK(interaction_list(make_box(3, 5, {7, 8, 9})).size() == 189);
  CHECK(interaction_list(make_box(2, 5, {7, 8, 0})).size() == 27);
  CHECK(interaction_list(make_box(3, 5, {0, 0, 0})).size() < 189);
  CHECK_THROWS_AS(interaction_list(make_box(3, 2, {0, 0, 0})), Error);

  for (int d = 1; d <= 3; ++d) {
    const std::size_t cap = static_cast<std::size_t>(std::pow(6, d) - std::pow(3, d));
    for (int level = 3; level <= (d == 3 ? 4 : 5); ++level) {
      const auto boxes = all_boxes(d, level);
      for (const BoxId& b : boxes) {
        const auto il = interaction_list(b);
        REQUIRE(il.size() <= cap);
        const BoxId pb = parent(b);
        // Independent definition: children of the parent's neighbours (and
        // the parent itself) that are neither b nor touching b.
        std::set<BoxId> ref;
        auto pn = nearest_neighbors(pb);
        pn.push_back(pb);
        for (const BoxId& q : pn) {
          for (const BoxId& c : children(q)) {
            if (c != b && !are_neighbors(c, b)) ref.insert(c);
          }
        }
        REQUIRE(std::set<BoxId>(il.begin(), il.end()) == ref);
        for (const BoxId& a : il) {
          REQUIRE(a.level == b.level);
          REQUIRE(in_interaction_list(b, a));
          REQUIRE(in_interaction_list(a, b));
        }
      }
    }
  }
}

TEST_CASE("box geometry") {
  GridSpec spec(3, 4);
  CHECK(box_width(1, spec) == 16);
  CHECK(box_width(5, spec) == 1);
  const BoxId leaf = box_of({5, 6, 7}, 5, spec);
  CHECK(box_center(leaf, spec) == Vec3{5, 6, 7});
  CHECK(box_center(make_box(3, 1, {}), spec) == Vec3{7.5, 7.5, 7.5});
  const BoxId a = make_box(3, 3, {0, 0, 0});
  const BoxId b = make_box(3, 3, {3, 4 % 4, 0});
  CHECK(box_pair_kernel(a, b, spec) == doctest::Approx(1.0 / 12.0));
  CHECK(box_from_key(3, 3, box_key(b)) == b);
}

TEST_CASE("lemma 1 examples") {
  GridSpec s(1, 2);
  const MortonKey a = shifted_morton_key({2, 0, 0}, ShiftVector{}, 2, s);
  const MortonKey b = shifted_morton_key({1, 0, 0}, ShiftVector{}, 2, s);
  CHECK((a > b ? a - b : b - a) == 1);
}

TEST_CASE("lemma 1 exhaustive") {
  for (int d = 1; d <= 3; ++d) {
    for (int n = 2; n <= 4; ++n) {
      const auto rep = verify_lemma1(GridSpec(d, n));
      CAPTURE(d);
      CAPTURE(n);
      CHECK(rep.counterexamples.empty());
      CHECK(rep.max_separation <= rep.bound);
      CHECK(rep.pairs_checked > 0);
    }
  }
  const auto r3 = verify_lemma1(GridSpec(3, 3));
  CHECK(r3.bound == 63);
  CHECK(r3.max_separation <= 63);
  CHECK_THROWS_AS(verify_lemma1(GridSpec(3, 8), 1000), Error);
}
