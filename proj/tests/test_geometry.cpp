#include <sstream>

#include "doctest.h"
#include "nvarray/geometry.hpp"
#include "support.hpp"

using namespace nvarray;

TEST_CASE("capacity of the reference chip") {
  const auto c = capacity(ChipSpec{}, 10.0, 5);
  CHECK(c.nvc_sites == 1012500);
  CHECK(c.total_qubits == 5062500);
  CHECK(capacity(ChipSpec{}, 10.0, 5, true).total_qubits == 6075000);
}

TEST_CASE("capacity counts whole cells only") {
  ChipSpec chip{0.0003, 0.0003, 0.5, 0.3};
  // 0.3 / 0.1 is 2.9999999999999996 in binary floating point.
  CHECK(capacity(chip, 0.1, 1).nvc_sites == 27);
  CHECK(capacity(ChipSpec{4.5, 4.5, 0.5, 50.0}, 11.0, 1).nvc_sites == 409LL * 409 * 4);
  CHECK(capacity(ChipSpec{}, 1e4, 1).nvc_sites == 0);
}

TEST_CASE("capacity rejects bad input") {
  CHECK(support::mentions(support::thrown_message([] { capacity(ChipSpec{}, 0.0, 5); }), "site_pitch_um"));
  CHECK(support::mentions(support::thrown_message([] { capacity(ChipSpec{}, 10.0, 0); }), "qubits_per_nvc"));
  ChipSpec deep;
  deep.usable_depth_um = 600;
  CHECK(support::mentions(support::thrown_message([&] { capacity(deep, 10.0, 5); }), "usable_depth_um"));
}

TEST_CASE("plan_sites orders depth, then row, then column") {
  const ArrayPlan plan;
  const auto sites = plan_sites(plan);
  REQUIRE(sites.size() == 2100);
  CHECK(sites.front().index == SiteIndex{0, 0, 0});
  CHECK(sites[1].index == SiteIndex{1, 0, 0});
  CHECK(sites[21].index == SiteIndex{0, 1, 0});
  CHECK(sites[420].index == SiteIndex{0, 0, 1});
  CHECK(sites.back().index == SiteIndex{20, 19, 4});
  CHECK(sites.back().target_um.isApprox(Vec3(60.0, 57.0, 18.0)));
  for (const auto& s : sites) CHECK(s.array_label == "M");
}

TEST_CASE("plan validation names the field") {
  ArrayPlan p;
  p.depths_um = {6, 6};
  CHECK(support::mentions(support::thrown_message([&] { plan_sites(p); }), "ArrayPlan.depths_um"));
  p = ArrayPlan{};
  p.pulse_energy_nj = 25.0;
  const auto msg = support::thrown_message([&] { plan_sites(p); });
  CHECK(support::mentions(msg, "ArrayPlan.pulse_energy_nj"));
  CHECK(support::mentions(msg, "[14, 19]"));
  p = ArrayPlan{};
  p.nx = 0;
  CHECK(support::mentions(support::thrown_message([&] { plan_sites(p); }), "ArrayPlan.nx"));
  p = ArrayPlan{};
  p.pitch_xy_um = -1;
  CHECK(support::mentions(support::thrown_message([&] { plan_sites(p); }), "ArrayPlan.pitch_xy_um"));
  p = ArrayPlan{};
  p.depths_um.clear();
  CHECK_THROWS_AS(plan_sites(p), std::invalid_argument);
}

TEST_CASE("single-site plan and JSON round trip") {
  ArrayPlan p;
  p.label = "S";
  p.nx = p.ny = 1;
  p.depths_um = {10.0};
  p.origin_um = Vec3(1, 2, 0);
  const auto sites = plan_sites(p);
  REQUIRE(sites.size() == 1);
  CHECK(sites[0].target_um.isApprox(Vec3(1, 2, 10)));

  const nlohmann::json j = p;
  const auto q = j.get<ArrayPlan>();
  CHECK(q.label == "S");
  CHECK(q.depths_um == p.depths_um);
  CHECK(q.origin_um.isApprox(p.origin_um));
  CHECK(q.pulse_energy_nj == p.pulse_energy_nj);
}

TEST_CASE("sites CSV has a header and one row per site") {
  const auto sites = plan_sites(ArrayPlan{});
  std::ostringstream os;
  write_sites_csv(os, sites);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "array_label,ix,iy,iz,x_um,y_um,z_um");
  std::getline(is, line);
  CHECK(line == "M,0,0,0,0,0,6");
  int rows = 1;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2100);
}
