#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"
#include "mqarch/csv.hpp"
#include "mqarch/model.hpp"
#include "mqarch/panel.hpp"
#include "mqarch/simulate.hpp"

namespace fs = std::filesystem;
using namespace mqarch;
using namespace testutil;

static std::string g_binary;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mqarch_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str(const std::string& name = "") const {
        return name.empty() ? path.string() : (path / name).string();
    }
};

int run(const std::string& args) {
    const std::string cmd = g_binary + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string run_capture_stderr(const std::string& args, const std::string& errfile) {
    const std::string cmd = g_binary + " " + args + " 2> " + errfile + " > /dev/null";
    std::system(cmd.c_str());
    std::ifstream in(errfile);
    std::string all, line;
    while (std::getline(in, line)) all += line + "\n";
    return all;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string write_small_model(const TempDir& dir) {
    ModelSpec2D m = make_qgarch_1d(20, 0.4, 0.1, 0.1, 0.08, 0.3);
    const std::string path = dir.str("model1d.csv");
    save_model_csv(m, path);
    return path;
}

std::string write_model_2d(const TempDir& dir) {
    const double nh[2][2] = {{0.4, 0.08}, {0.1, 0.3}};
    const double be[2][2] = {{0.1, 0.12}, {0.1, 0.08}};
    const double nz[2][2] = {{0.1, 0.04}, {0.05, 0.1}};
    const double om[2][2] = {{0.08, 0.1}, {0.09, 0.07}};
    ModelSpec2D m = make_qgarch_2d(30, nh, be, nz, om, 0.4, 0.5, false);
    const std::string path = dir.str("model2d.csv");
    save_model_csv(m, path);
    return path;
}

}  // namespace

TEST_CASE("simulate mqarch emits the panel with the row-count contract") {
    TempDir dir;
    const std::string spec = write_small_model(dir);
    const std::string out = dir.str("out");
    CHECK(run("--out-dir " + out + " --seed 7 simulate --mode mqarch --spec " + spec +
              " --bins 5000") == 0);
    csv::Table t = csv::read(out + "/panel.csv");
    CHECK(t.rows.size() == 5000);
    CHECK(fs::exists(out + "/simulate.resolved.cfg"));
    CHECK(fs::exists(out + "/spec_echo.csv"));
    // no staging residue
    for (const auto& e : fs::directory_iterator(out))
        CHECK(e.path().filename().string().find(".staging") == std::string::npos);
}

TEST_CASE("simulate thinning emits events near the expected rate") {
    TempDir dir;
    PointProcessSpec s;
    s.n_assets = 1;
    s.lambda_inf = {0.02, 0.0};
    s.phi[0][0] = {0.5, 0.1, KernelKind::Linear};
    const std::string spec = dir.str("pp.csv");
    save_point_process_csv(s, spec);
    const std::string out = dir.str("out");
    CHECK(run("--out-dir " + out + " --seed 3 simulate --mode thinning --spec " + spec +
              " --horizon 200000") == 0);
    csv::Table t = csv::read(out + "/events.csv");
    const double rate = static_cast<double>(t.rows.size()) / 200000.0;
    CHECK(rate == doctest::Approx(0.04).epsilon(0.1));
}

TEST_CASE("missing spec file exits nonzero and names the path") {
    TempDir dir;
    const std::string missing = dir.str("nope.csv");
    const std::string err = run_capture_stderr(
        "--out-dir " + dir.str("o") + " simulate --mode mqarch --spec " + missing +
            " --bins 100",
        dir.str("stderr.txt"));
    CHECK(err.find("nope.csv") != std::string::npos);
    CHECK(run("--out-dir " + dir.str("o2") + " simulate --mode mqarch --spec " +
              missing + " --bins 100") == 3);
}

TEST_CASE("calibrate step gating") {
    TempDir dir;
    const std::string spec = write_model_2d(dir);
    const std::string out = dir.str("sim");
    REQUIRE(run("--out-dir " + out + " --seed 11 simulate --mode mqarch --spec " +
                spec + " --bins 60000") == 0);

    SUBCASE("steps 1 only leaves the cross grids out") {
        const std::string cal = dir.str("cal1");
        CHECK(run("--out-dir " + cal + " calibrate --input " + out +
                  "/panel.csv --q 20 --steps 1") == 0);
        csv::Table t = csv::read(cal + "/model.csv");
        const int c_name = t.col_required("kernel_name");
        const int c_tgt = t.col_required("target");
        const int c_src = t.col_required("source");
        bool has_self = false;
        for (const auto& r : t.rows) {
            if (r[c_name] == "phi") {
                if (r[c_tgt] == r[c_src]) has_self = true;
                CHECK(r[c_tgt] == r[c_src]);  // no cross rows
            }
            CHECK(r[c_name] != "phi_cross");
        }
        CHECK(has_self);
    }
    SUBCASE("step 4 without steps 1-3 is a contract violation") {
        CHECK(run("--out-dir " + dir.str("cal4") + " calibrate --input " + out +
                  "/panel.csv --q 20 --no-mirror --steps 4") == 2);
    }
    SUBCASE("full run emits model, diagnostics, suite") {
        const std::string cal = dir.str("calfull");
        CHECK(run("--out-dir " + cal + " calibrate --input " + out +
                  "/panel.csv --q 15 --q-cross 10 --plot-data") == 0);
        CHECK(fs::exists(cal + "/model.csv"));
        CHECK(fs::exists(cal + "/diagnostics.csv"));
        CHECK(fs::exists(cal + "/suite.csv"));
        CHECK(fs::exists(cal + "/kernel_profiles.csv"));
        CHECK(fs::exists(cal + "/calibrate.resolved.cfg"));
    }
}

TEST_CASE("byte-identical outputs for identical inputs and seed") {
    TempDir dir;
    const std::string spec = write_model_2d(dir);
    const std::string o1 = dir.str("a"), o2 = dir.str("b");
    REQUIRE(run("--out-dir " + o1 + " --seed 99 simulate --mode mqarch --spec " + spec +
                " --bins 20000") == 0);
    REQUIRE(run("--out-dir " + o2 + " --seed 99 simulate --mode mqarch --spec " + spec +
                " --bins 20000") == 0);
    CHECK(file_bytes(o1 + "/panel.csv") == file_bytes(o2 + "/panel.csv"));

    const std::string c1 = dir.str("ca"), c2 = dir.str("cb");
    REQUIRE(run("--out-dir " + c1 + " --workers 2 calibrate --input " + o1 +
                "/panel.csv --q 12 --q-cross 8") == 0);
    REQUIRE(run("--out-dir " + c2 + " --workers 1 calibrate --input " + o2 +
                "/panel.csv --q 12 --q-cross 8") == 0);
    // worker count must not change the numbers
    CHECK(file_bytes(c1 + "/model.csv") == file_bytes(c2 + "/model.csv"));
}

TEST_CASE("unknown config keys are rejected") {
    TempDir dir;
    const std::string cfg = dir.str("bad.cfg");
    {
        std::ofstream out(cfg);
        out << "[simulate]\nmode=mqarch\nbogus_knob=1\n";
    }
    const std::string spec = write_small_model(dir);
    CHECK(run("--config " + cfg + " --out-dir " + dir.str("o") +
              " simulate --spec " + spec + " --bins 100") == 2);
}

TEST_CASE("config file values are applied and overridden by flags") {
    TempDir dir;
    const std::string spec = write_small_model(dir);
    const std::string cfg = dir.str("sim.cfg");
    {
        std::ofstream out(cfg);
        out << "[simulate]\nmode=mqarch\nbins=777\n";
    }
    const std::string out = dir.str("o");
    CHECK(run("--config " + cfg + " --out-dir " + out + " simulate --spec " + spec) ==
          0);
    CHECK(csv::read(out + "/panel.csv").rows.size() == 777);
    const std::string out2 = dir.str("o2");
    CHECK(run("--config " + cfg + " --out-dir " + out2 + " simulate --spec " + spec +
              " --bins 555") == 0);
    CHECK(csv::read(out2 + "/panel.csv").rows.size() == 555);
}

TEST_CASE("preprocess command round trip") {
    TempDir dir;
    // synthetic OHLC file: 120 days x 6 bins, 1 asset
    const std::string ohlc = dir.str("bars.csv");
    {
        csv::Writer w(ohlc, {"date", "time", "asset", "open", "high", "low", "close"});
        GaussianRng g(5);
        double price = 100.0;
        for (int d = 0; d < 120; ++d)
            for (int b = 0; b < 6; ++b) {
                const double o = price;
                const double c = o * std::exp(0.001 * g.normal());
                const double h = std::max(o, c) * 1.0005;
                const double l = std::min(o, c) * 0.9995;
                char time[6];
                std::snprintf(time, sizeof time, "10:%02d", b);
                w.row({"d" + std::to_string(d), time, "1", csv::fmt(o), csv::fmt(h),
                       csv::fmt(l), csv::fmt(c)});
                price = c;
            }
        w.close();
    }
    const std::string out = dir.str("pre");
    CHECK(run("--out-dir " + out + " preprocess --input " + ohlc +
              " --window-days 100") == 0);
    BinnedPanel p = load_panel_csv(out + "/panel.csv");
    CHECK(p.days.size() == 20);  // first 100 days consumed by the window
    CHECK(p.days[0].bins() == 6);
}

TEST_CASE("moments command emits the suite") {
    TempDir dir;
    const std::string spec = write_small_model(dir);
    const std::string sim = dir.str("sim");
    REQUIRE(run("--out-dir " + sim + " simulate --mode mqarch --spec " + spec +
                " --bins 30000") == 0);
    const std::string out = dir.str("mom");
    CHECK(run("--out-dir " + out + " moments --input " + sim +
              "/panel.csv --q 10 --no-dx") == 0);
    csv::Table t = csv::read(out + "/suite.csv");
    bool has_c = false, has_d = false;
    const int c_s = t.col_required("structure");
    for (const auto& r : t.rows) {
        if (r[c_s] == "C") has_c = true;
        if (r[c_s] == "D") has_d = true;
    }
    CHECK(has_c);
    CHECK(has_d);
}

TEST_CASE("factor command and summary recomputation") {
    TempDir dir;
    // two synthetic stocks sharing a factor
    ModelSpec2D fm = make_qgarch_1d(20, 0.4, 0.1, 0.1, 0.1, 0.3, false);
    MqarchResult fsim = simulate_mqarch(fm, 40000, 3);
    GaussianRng g(9);
    const std::string fpath = dir.str("factor.csv");
    save_panel_csv(fsim.panel, fpath);
    std::vector<std::string> paths;
    for (int sdx = 0; sdx < 2; ++sdx) {
        BinnedPanel stock;
        stock.n_assets = 1;
        BinnedPanel::Day day = stock.make_day(40000);
        for (int t = 0; t < 40000; ++t) {
            const double r =
                0.7 * fsim.panel.days[0].r[0][static_cast<size_t>(t)] + 0.5 * g.normal();
            day.r[0][static_cast<size_t>(t)] = r;
            day.s2[0][static_cast<size_t>(t)] = r * r;
        }
        stock.days.push_back(std::move(day));
        paths.push_back(dir.str("stock" + std::to_string(sdx) + ".csv"));
        save_panel_csv(stock, paths.back());
    }
    const std::string manifest = dir.str("manifest.csv");
    {
        csv::Writer w(manifest, {"ticker", "path"});
        w.row({"AAA", paths[0]});
        w.row({"BBB", paths[1]});
        w.close();
    }
    const std::string out = dir.str("fac");
    CHECK(run("--out-dir " + out + " factor --manifest " + manifest + " --factor " +
              fpath + " --q 15 --q-cross 10") == 0);
    CHECK(fs::exists(out + "/factor_model.csv"));
    CHECK(fs::exists(out + "/stock_AAA.csv"));
    CHECK(fs::exists(out + "/stock_BBB.csv"));

    // summary norms equal a recomputation from the emitted spec files
    ModelSpec2D aaa = load_model_csv(out + "/stock_AAA.csv");
    csv::Table sum = csv::read(out + "/summary.csv");
    const int c_sec = sum.col_required("section");
    const int c_tick = sum.col_required("ticker");
    const int c_key = sum.col_required("key");
    const int c_val = sum.col_required("value");
    bool checked = false;
    for (const auto& r : sum.rows)
        if (r[c_sec] == "stock" && r[c_tick] == "AAA" && r[c_key] == "phi_self_norm") {
            CHECK(csv::parse_double(r[c_val]) ==
                  doctest::Approx(kernel_l1_norm(aaa.phi(0, 0))).epsilon(1e-12));
            checked = true;
        }
    CHECK(checked);

    // empty manifest fails
    const std::string empty = dir.str("empty.csv");
    {
        csv::Writer w(empty, {"ticker", "path"});
        w.close();
    }
    CHECK(run("--out-dir " + dir.str("facx") + " factor --manifest " + empty +
              " --factor " + fpath) == 3);
}

TEST_CASE("mle-refine exact mode from an init file") {
    TempDir dir;
    PointProcessSpec s;
    s.n_assets = 1;
    s.lambda_inf = {0.05, 0.0};
    s.phi[0][0] = {0.4, 0.1, KernelKind::Linear};
    s.zumbach[0][0] = {0.1, 0.08, KernelKind::Zumbach};
    const std::string spec = dir.str("truth.csv");
    save_point_process_csv(s, spec);
    const std::string sim = dir.str("sim");
    REQUIRE(run("--out-dir " + sim + " --seed 5 simulate --mode thinning --spec " +
                spec + " --horizon 300000") == 0);
    PointProcessSpec init = s;
    init.phi[0][0].norm = 0.25;
    init.lambda_inf[0] = 0.1;
    const std::string initp = dir.str("init.csv");
    save_point_process_csv(init, initp);
    const std::string out = dir.str("mle");
    CHECK(run("--out-dir " + out + " mle-refine --mode exact --events " + sim +
              "/events.csv --init " + initp + " --family zhawkes1d") == 0);
    csv::Table t = csv::read(out + "/theta.csv");
    const int c_p = t.col_required("param");
    const int c_v = t.col_required("value");
    double nh = 0.0;
    for (const auto& r : t.rows)
        if (r[c_p] == "n_H") nh = csv::parse_double(r[c_v]);
    CHECK(nh == doctest::Approx(0.4).epsilon(0.3));
}

TEST_CASE("report emits profiles and norms") {
    TempDir dir;
    const std::string spec = write_model_2d(dir);
    const std::string out = dir.str("rep");
    CHECK(run("--out-dir " + out + " report --model " + spec) == 0);
    csv::Table norms = csv::read(out + "/norms.csv");
    const int c_k = norms.col_required("kernel");
    const int c_t = norms.col_required("target");
    const int c_s = norms.col_required("source");
    const int c_v = norms.col_required("l1_signed");
    ModelSpec2D m = load_model_csv(spec);
    bool found = false;
    for (const auto& r : norms.rows)
        if (r[c_k] == "phi" && r[c_t] == "1" && r[c_s] == "1") {
            CHECK(csv::parse_double(r[c_v]) ==
                  doctest::Approx(kernel_l1_norm(m.phi(0, 0))).epsilon(1e-12));
            found = true;
        }
    CHECK(found);
}

int main(int argc, char** argv) {
    if (argc > 1 && argv[argc - 1][0] != '-') {
        g_binary = argv[argc - 1];
        --argc;
    }
    if (g_binary.empty()) {
        std::fprintf(stderr, "usage: test_cli [doctest args] <path-to-mqarch>\n");
        return 1;
    }
    return doctest::Context(argc, argv).run();
}
