// Acceptance report: one PASS/FAIL line per criterion. Criteria 6-10 drive
// the crossup executable the way a user would.

#include "crossup/geometry/io.hpp"
#include "crossup/geometry/sampling.hpp"
#include "crossup/geometry/shapes.hpp"
#include "crossup/pipeline/upsample.hpp"
#include "grad_suite.hpp"
#include "scenarios.hpp"

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace crossup;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path work;
    std::string checkpoint;  // trained desk model, set by criterion 6
};

std::string quote(const std::string& s)
{
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

// Runs the CLI; stdout is returned, stderr appended to the work-dir log.
std::string cli(const Context& ctx, const std::vector<std::string>& args, int* code = nullptr)
{
    std::string cmd = quote(CROSSUP_CLI_PATH);
    for (const auto& a : args) cmd += ' ' + quote(a);
    const fs::path out = ctx.work / "last_stdout.txt";
    cmd += " > " + quote(out.string()) + " 2>> " + quote((ctx.work / "cli.log").string());
    const int status = std::system(cmd.c_str());
    const int exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (code) {
        *code = exit_code;
    } else if (exit_code != 0) {
        throw std::runtime_error("command failed (" + std::to_string(exit_code) + "): " + cmd);
    }
    std::ifstream in(out);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Metrics {
    double cd = 0.0, hd = 0.0, p2f = 0.0, uni = 0.0;
};

Metrics evaluate(const Context& ctx, const fs::path& pred, const fs::path& gt, const std::string& mesh = "")
{
    std::vector<std::string> args{"evaluate", "--pred", pred.string(), "--gt-points", gt.string()};
    if (!mesh.empty()) args.insert(args.end(), {"--gt-mesh", mesh});
    std::istringstream rec(cli(ctx, args));
    std::string name;
    Metrics m;
    rec >> name >> m.cd >> m.hd >> m.p2f >> m.uni;
    if (rec.fail()) throw std::runtime_error("unreadable evaluate record");
    return m;
}

void write_points(const fs::path& path, const std::vector<geometry::Vec3>& pts)
{
    geometry::io::write_cloud(path, geometry::PointCloud(pts));
}

std::string num(double v)
{
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

std::size_t lines_of(const fs::path& p)
{
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

Verdict gradients()
{
    double worst = 0.0;
    std::string worst_name;
    std::size_t cases = 0;
    for (const auto& c : testing::gradient_cases()) {
        ++cases;
        for (std::uint64_t seed = 1; seed <= 25; ++seed) {
            const auto r = c.run(seed);
            if (r.checked == 0) return {false, c.name + " checked no coordinates"};
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                worst_name = c.name;
            }
        }
    }
    return {worst < 1e-4, std::to_string(cases) + " ops x 25 seeds, max rel error " + num(worst) + " (" + worst_name +
                              ")"};
}

Verdict oracles()
{
    const auto r = testing::oracle_equivalence(200, 64, 17);
    return {r.worst() <= 1e-12 && r.knn_mismatches == 0 && r.radius_mismatches == 0,
            "200 instances, max rel error " + num(r.worst()) + ", knn mismatches " + std::to_string(r.knn_mismatches) +
                ", radius mismatches " + std::to_string(r.radius_mismatches)};
}

Verdict rosy()
{
    const auto s = testing::rosy_sweep(3, 8);
    const double peak = 1.0 - std::sqrt(2.0) / 2.0;
    const bool at_peak = std::abs(std::fmod(s.sweep_max_angle, 90.0) - 45.0) < 1e-9;
    return {s.worst_at_quarter_turns <= 1e-12 && std::abs(s.at_45 - peak) <= 1e-9 &&
                std::abs(s.sweep_max - peak) <= 1e-9 && at_peak,
            "quarter turns " + num(s.worst_at_quarter_turns) + ", at 45 deg " + num(s.at_45) + ", sweep max " +
                num(s.sweep_max) + " at " + num(s.sweep_max_angle) + " deg"};
}

Verdict round_trip()
{
    const double e = testing::chart_round_trip_error(100000, 23);
    return {e <= 1e-9, "1e5 pairs, max error " + num(e)};
}

Verdict cube_alignment()
{
    const auto r = testing::cube_edge_alignment(2000, 30, 1);
    return {r.fraction() >= 0.85, std::to_string(r.aligned) + " of " + std::to_string(r.near_edge) +
                                      " near-edge points within 10 deg (" + num(100.0 * r.fraction()) + "%)"};
}

// Blue-noise samples of a built-in shape.
fs::path sample(const Context& ctx, const std::string& shape, std::size_t count, std::uint64_t seed,
                const std::string& name)
{
    const fs::path out = ctx.work / name;
    cli(ctx, {"sample-mesh", "--shape", shape, "--count", std::to_string(count), "--seed", std::to_string(seed),
              "--output", out.string()});
    return out;
}

fs::path upsample(const Context& ctx, const fs::path& input, double ratio, std::size_t iters, const std::string& name)
{
    const fs::path out = ctx.work / name;
    std::ostringstream r;
    r << ratio;
    std::vector<std::string> args{"upsample", "--input", input.string(), "--output", out.string(), "--ratio",
                                  r.str(), "--iters", std::to_string(iters), "--checkpoint", ctx.checkpoint};
    cli(ctx, args);
    return out;
}

Verdict end_to_end(Context& ctx, const std::string& reuse)
{
    std::string timing;
    if (reuse.empty()) {
        const auto t0 = std::chrono::steady_clock::now();
        const fs::path data = ctx.work / "desk.ds";
        cli(ctx, {"make-dataset", "--patches-per-shape", "50", "--seed", "1", "--output", data.string()});
        ctx.checkpoint = (ctx.work / "desk.ckpt").string();
        cli(ctx, {"train", "--dataset", data.string(), "--preset", "desk", "--checkpoint", ctx.checkpoint, "--curves",
                  (ctx.work / "desk_curves.csv").string()});
        const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
        timing = "trained in " + num(minutes) + " min";
        if (minutes > 30.0) return {false, timing + " (budget 30 min)"};
    } else {
        ctx.checkpoint = reuse;
        timing = "reused " + reuse;
    }

    double in_sum = 0.0, out_sum = 0.0;
    std::string per_shape;
    for (const auto& shape : geometry::shapes::desk_holdout_names()) {
        const auto input = sample(ctx, shape, 256, 11, shape + "_in.xyz");
        const auto gt = sample(ctx, shape, 8192, 12, shape + "_gt.xyz");
        const auto out = upsample(ctx, input, 4.0, 10, shape + "_x4.xyz");
        const double cd_in = evaluate(ctx, input, gt).cd;
        const double cd_out = evaluate(ctx, out, gt).cd;
        in_sum += cd_in;
        out_sum += cd_out;
        per_shape += ", " + shape + " " + num(cd_out) + "/" + num(cd_in);
    }
    const double ratio = out_sum / in_sum;
    return {ratio <= 0.5, timing + "; mean CD output/input " + num(ratio) + per_shape};
}

Verdict iteration_trend(const Context& ctx)
{
    const fs::path input = ctx.work / "nonuniform_sphere.xyz";
    write_points(input, testing::nonuniform_sphere(256, 0.01, 31));
    const auto gt = sample(ctx, "sphere", 8192, 32, "sphere_gt.xyz");
    const fs::path mesh = ctx.work / "sphere.obj";
    geometry::io::write_mesh(mesh, geometry::shapes::sphere());
    const auto one = evaluate(ctx, upsample(ctx, input, 4.0, 1, "sphere_d1.xyz"), gt, mesh.string());
    const auto ten = evaluate(ctx, upsample(ctx, input, 4.0, 10, "sphere_d10.xyz"), gt, mesh.string());
    return {ten.uni < one.uni && ten.cd <= one.cd, "Uni D=1 " + num(one.uni) + " D=10 " + num(ten.uni) + "; CD D=1 " +
                                                       num(one.cd) + " D=10 " + num(ten.cd)};
}

Verdict ratios(const Context& ctx)
{
    const auto input = sample(ctx, "torus", 1000, 41, "torus_1k.xyz");
    const std::size_t m = lines_of(input);
    if (m != 1000) return {false, "input has " + std::to_string(m) + " points"};
    std::string detail;
    bool ok = true;
    for (double r : {1.7, 3.4, 6.3, 9.4}) {
        const auto out = upsample(ctx, input, r, 10, "torus_r" + num(r) + ".xyz");
        const auto cloud = geometry::io::read_cloud(out);
        bool valid = true;
        try {
            cloud.validate();
        } catch (const std::exception&) {
            valid = false;
        }
        const std::size_t want = pipeline::target_count(r, m);
        ok = ok && valid && cloud.size() == want && want == static_cast<std::size_t>(std::floor(r * 1000.0 + 1e-9));
        detail += (detail.empty() ? "" : ", ") + num(r) + ": " + std::to_string(cloud.size()) + "/" +
                  std::to_string(want) + (valid ? "" : " invalid");
    }
    return {ok, detail};
}

Verdict noise(const Context& ctx)
{
    const auto clean = sample(ctx, "sphere", 256, 51, "sphere_clean.xyz");
    const auto gt = sample(ctx, "sphere", 8192, 52, "sphere_gt2.xyz");
    const fs::path noisy = ctx.work / "sphere_noisy.xyz";
    write_points(noisy, testing::add_noise(geometry::io::read_cloud(clean).points(), 0.01, 53));
    const double a = evaluate(ctx, upsample(ctx, clean, 4.0, 10, "clean_x4.xyz"), gt).cd;
    const double b = evaluate(ctx, upsample(ctx, noisy, 4.0, 10, "noisy_x4.xyz"), gt).cd;
    return {b <= 3.0 * a, "CD clean " + num(a) + ", noisy " + num(b) + ", ratio " + num(b / a)};
}

Verdict determinism(const Context& ctx)
{
    const auto input = sample(ctx, "cone", 64, 61, "cone.xyz");
    const fs::path data = ctx.work / "tiny.ds";
    cli(ctx, {"make-dataset", "--shapes", "cube", "cylinder", "--patches-per-shape", "4", "--base-points", "4000",
              "--gt-points", "128", "--input-points", "32", "--seed", "5", "--output", data.string()});
    std::vector<std::string> ups, cks;
    for (int run = 0; run < 2; ++run) {
        const fs::path up = ctx.work / ("det_up" + std::to_string(run) + ".xyz");
        cli(ctx, {"--deterministic", "upsample", "--input", input.string(), "--output", up.string(), "--ratio", "3",
                  "--seed", "7", "--checkpoint", ctx.checkpoint});
        ups.push_back(slurp(up));
        const fs::path ck = ctx.work / ("det" + std::to_string(run) + ".ckpt");
        cli(ctx, {"--deterministic", "train", "--dataset", data.string(), "--epochs", "1", "--seed", "7",
                  "--checkpoint", ck.string()});
        cks.push_back(slurp(ck));
    }
    const bool up_same = ups[0] == ups[1] && !ups[0].empty();
    const bool ck_same = cks[0] == cks[1] && !cks[0].empty();
    return {up_same && ck_same, std::string("upsample ") + (up_same ? "identical" : "differs") + ", train checkpoint " +
                                    (ck_same ? "identical" : "differs")};
}

} // namespace

int main(int argc, char** argv)
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Acceptance report"};
    std::string work = "acceptance_work", reuse;
    std::vector<int> only;
    app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
    app.add_option("--checkpoint", reuse, "Skip training and use this desk model");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);

    Context ctx;
    ctx.work = fs::absolute(work);
    fs::create_directories(ctx.work);
    std::ofstream(ctx.work / "cli.log", std::ios::trunc);

    // Criteria 7-10 need the trained model from 6.
    struct Criterion {
        int id;
        std::string name;
        double budget;  // seconds, 0 = none
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", 60, gradients},
        {2, "oracle equivalence", 30, oracles},
        {3, "4-RoSy smoothness identities", 1, rosy},
        {4, "chart round trip", 5, round_trip},
        {5, "cube cross-field alignment", 30, cube_alignment},
        {6, "toy end-to-end learning", 0, [&] { return end_to_end(ctx, reuse); }},
        {7, "iterative refinement trend", 120, [&] { return iteration_trend(ctx); }},
        {8, "arbitrary ratio contract", 60, [&] { return ratios(ctx); }},
        {9, "noise robustness", 120, [&] { return noise(ctx); }},
        {10, "determinism", 0, [&] { return determinism(ctx); }},
    };

    ctx.checkpoint = reuse;
    bool all = true;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            if (c.id >= 7 && ctx.checkpoint.empty()) throw std::runtime_error("no trained model (criterion 6)");
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget > 0 && secs > c.budget) {
            v.pass = false;
            v.detail += "; over the " + num(c.budget) + " s budget";
        }
        all = all && v.pass;
        std::cout << "criterion " << std::setw(2) << c.id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << c.name
                  << ": " << v.detail << " [" << std::fixed << std::setprecision(2) << secs << " s]"
                  << std::defaultfloat << std::endl;
    }
    return all ? 0 : 1;
}
