#include "dimgap/harness.hpp"
#include "dimgap/io.hpp"

#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace dimgap;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
seed = 3
[data]
d = 4
n = 40
n_test = 20
k = 2
tau_mode = "d-over-D"
[train]
width = 16
epochs = 40
[attack]
norms = ["l2"]
subspaces = ["off-manifold"]
n_eval = 10
[sweep]
axis = "D"
values = [8, 12]
seeds = [1, 2]
)";

ExperimentConfig tiny(const std::string& out) {
  auto c = config_from_toml(kTiny);
  c.out = fs::temp_directory_path() / out;
  fs::remove_all(c.out);
  return c;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

bool error_kind_is(const std::string& text, ErrorKind kind) {
  try {
    config_from_toml(text).validate();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config parsing") {
  const auto c = config_from_toml(kTiny);
  CHECK(c.seed == 3);
  CHECK(c.data.d == 4);
  CHECK(c.data.tau_mode == TauMode::DOverD);
  CHECK(c.train.width == 16);
  CHECK(c.attack.norms == std::vector<Norm>{Norm::L2});
  CHECK(c.attack.subspaces == std::vector<Subspace>{Subspace::OffManifold});
  CHECK(c.sweep_values == std::vector<int>{8, 12});
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.attack.search.target == 0.1);

  const auto t = config_from_toml("[data]\ntau = 0.3\n");
  CHECK(t.data.tau_mode == TauMode::Explicit);
  CHECK(t.data.tau == 0.3);
}

TEST_CASE("config errors") {
  CHECK(error_kind_is("[data]\nbogus = 1\n", ErrorKind::InvalidSpec));
  CHECK(error_kind_is("[extra]\nx = 1\n", ErrorKind::InvalidSpec));
  CHECK(error_kind_is("[sweep]\nvalues = [500, 200]\n", ErrorKind::InvalidSpec));
  CHECK(error_kind_is("[sweep]\nseeds = []\n", ErrorKind::InvalidSpec));
  CHECK(error_kind_is("[sweep]\naxis = \"d\"\nvalues = [3000]\n", ErrorKind::InvalidDimensions));
  CHECK(error_kind_is("[data\n", ErrorKind::Parse));
  CHECK(error_kind_is("[data]\nd = \"ten\"\n", ErrorKind::InvalidSpec));
}

TEST_CASE("config round trip") {
  auto c = config_from_toml(kTiny);
  c.train.stop_loss = 1e-3;
  c.attack.search.grid = {0.5, 1.0};
  c.record_runtime = true;
  const auto back = config_from_toml(config_to_toml(c));
  CHECK(config_to_toml(back) == config_to_toml(c));
  CHECK(back.train.stop_loss == c.train.stop_loss);
  CHECK(back.attack.search.grid == c.attack.search.grid);
}

TEST_CASE("cell seeds are distinct and stable") {
  const auto c = config_from_toml(kTiny);
  CHECK(cell_seed(c, 0) == cell_seed(c, 0));
  CHECK(cell_seed(c, 0) != cell_seed(c, 1));
  CHECK(cell_seed(c, 1) != cell_seed(c, 2));
}

TEST_CASE("sweep cardinality and summary") {
  auto c = tiny("dimgap_test_sweep_card");
  const auto r = run_sweep(c, false, 1);
  CHECK(r.cells.size() == 4);
  const auto lines = lines_of(read_file(c.out / "sweep.csv"));
  REQUIRE(lines.size() == 1 + 4 + 2);
  CHECK(lines[0] + "\n" == sweep_csv_header());
  int summaries = 0;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (lines[i].find(",median,") != std::string::npos) ++summaries;
  CHECK(summaries == 2);
  CHECK(fs::exists(c.out / "sweep_summary.csv"));
  CHECK(fs::exists(c.out / "timing.json"));
  CHECK_FALSE(fs::exists(c.out / "theory_attack.csv"));
  for (const auto& cell : r.cells)
    for (const auto& row : cell.rows) {
      CHECK(row.clean_train_acc >= 0);
      CHECK(row.clean_train_acc <= 1);
      CHECK((row.saturated || row.eps_star >= 0));
    }
  // runtime is left out unless asked for
  CHECK(lines[1].find(",-,") != std::string::npos);
  fs::remove_all(c.out);
}

TEST_CASE("lr = 0 cell completes at chance level") {
  auto c = tiny("dimgap_test_sweep_lr0");
  c.train.lr = 0;
  c.sweep_values = {8};
  c.seeds = {1};
  c.attack.subspaces = {Subspace::Full, Subspace::OnManifold, Subspace::OffManifold};
  const auto cell = run_cell(c, 0);
  REQUIRE(cell.rows.size() == 3);
  for (const auto& row : cell.rows) {
    CHECK(row.status.rfind("error", 0) != 0);
    CHECK(row.clean_train_acc >= 0);
    CHECK(row.clean_train_acc <= 1);
  }
}

TEST_CASE("cell failures are recorded, not thrown") {
  auto c = tiny("dimgap_test_sweep_fail");
  c.data.xi_scale = 1;
  c.data.omega_scale = 60;  // nice examples cannot be drawn
  c.seeds = {1};
  c.sweep_values = {8};
  const auto cell = run_cell(c, 0);
  REQUIRE_FALSE(cell.rows.empty());
  CHECK(cell.rows[0].status.rfind("error:", 0) == 0);
}

TEST_CASE("sweep bytes do not depend on thread count, and resume matches") {
  auto a = tiny("dimgap_test_sweep_t1");
  auto b = tiny("dimgap_test_sweep_t3");
  a.attack.theory = b.attack.theory = true;
  a.attack.n_theory = b.attack.n_theory = 6;
  const int before = omp_get_max_threads();
  run_sweep(a, false, 1);
  run_sweep(b, false, 3);
  omp_set_num_threads(before);
  for (const char* f : {"sweep.csv", "sweep_summary.csv", "theory_attack.csv"})
    CHECK_MESSAGE(read_file(a.out / f) == read_file(b.out / f), f);

  // Drop the last two cells and resume.
  auto lines = lines_of(read_file(a.out / "sweep.csv"));
  std::string partial;
  for (std::size_t i = 0; i < 3; ++i) partial += lines[i] + "\n";
  write_file(b.out / "sweep.csv", partial);
  auto tl = lines_of(read_file(a.out / "theory_attack.csv"));
  write_file(b.out / "theory_attack.csv", tl[0] + "\n" + tl[1] + "\n" + tl[2] + "\n");
  const auto r = run_sweep(b, true, 1);
  CHECK(r.resumed == 2);
  for (const char* f : {"sweep.csv", "sweep_summary.csv", "theory_attack.csv"})
    CHECK_MESSAGE(read_file(a.out / f) == read_file(b.out / f), f);
  omp_set_num_threads(before);
  fs::remove_all(a.out);
  fs::remove_all(b.out);
}

TEST_CASE("theory report flags") {
  const auto dir = fs::temp_directory_path() / "dimgap_test_theory";
  fs::remove_all(dir);
  TheoryReportParams p;
  p.regime.d = 100;
  p.regime.D = 2000;
  p.tau_mode = TauMode::DOverD;
  p.draws = 200;
  const auto j = run_theory_report(p, dir);
  CHECK(fs::exists(dir / "theory_report.json"));
  CHECK(fs::exists(dir / "lemma_verification.json"));
  CHECK(j["flags"]["a4_false"] == true);

  p.tau_mode = TauMode::Explicit;
  p.regime.tau = 0;
  const auto z = run_theory_report(p, dir);
  CHECK(z["flags"]["eta_perp_undefined"] == true);
  fs::remove_all(dir);
}

}
