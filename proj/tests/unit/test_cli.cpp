#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "specsim/report.hpp"

using namespace specsim;
namespace fs = std::filesystem;

namespace {

struct Output {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

const fs::path& workdir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / ("specsim_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Output cli(const std::string& args) {
    const fs::path out = workdir() / "stdout.txt";
    const fs::path err = workdir() / "stderr.txt";
    const std::string cmd = "cd '" + workdir().string() + "' && '" + std::string(SPECSIM_CLI) + "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Output o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
}

std::string corpus(const std::string& name) { return std::string(SPECSIM_CORPUS_DIR) + "/" + name; }

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("usage errors exit with the config code") {
    CHECK(cli("").code == 2);
    CHECK(cli("no-such-command").code == 2);
    CHECK(cli("probe").code == 2);
    CHECK(cli("--help").code == 0);
    const auto bad_profile = cli("detect-predictor --profile pentium");
    CHECK(bad_profile.code == 2);
    CHECK(contains(bad_profile.err, "pentium"));
    CHECK(cli("run-listing missing.asm").code == 2);
    CHECK(cli("probe --address 0xffffffff81000000 --trials 0").code == 2);
    CHECK(cli("probe --address zz").code == 2);
    CHECK(cli("detect-predictor --noise loud").code == 2);
}

TEST_CASE("run-listing") {
    const auto r = cli("run-listing '" + corpus("listing1.asm") + "' --profile haswell");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "Exited"));
    CHECK(contains(r.out, "rdx = 0x1"));

    {
        std::ofstream bad(workdir() / "bad.asm");
        bad << "nop\nfrobnicate rax\n";
    }
    const auto e = cli("run-listing bad.asm");
    CHECK(e.code == 2);
    CHECK(contains(e.err, "line 2"));
}

TEST_CASE("run-listing writes a trace") {
    fs::copy_file(corpus("listing1.asm"), workdir() / "listing1.asm", fs::copy_options::overwrite_existing);
    fs::remove(workdir() / "listing1.trace.jsonl");
    const auto r = cli("run-listing listing1.asm --trace");
    CHECK(r.code == 0);
    const std::string trace = slurp(workdir() / "listing1.trace.jsonl");
    for (const char* kind : {"fetch", "dispatch", "complete", "commit", "predict", "mispredict", "flush", "terminate"})
        CHECK(contains(trace, std::string("\"event\":\"") + kind + "\""));
    std::istringstream lines(trace);
    std::string line;
    size_t n = 0;
    while (std::getline(lines, line)) {
        CHECK_NOTHROW((void)Json::parse(line));
        ++n;
    }
    CHECK(n > 2048);
    CHECK(cli("run-listing listing1.asm --trace custom.jsonl").code == 0);
    CHECK(slurp(workdir() / "custom.jsonl") == trace);
}

TEST_CASE("detect-predictor and sweeps") {
    const auto d = cli("detect-predictor --profile nehalem --out -");
    CHECK(d.code == 0);
    CHECK(contains(d.out, "\"schema\": \"specsim.report/1\""));
    CHECK(contains(d.out, "\"forward_jump\": \"T\""));

    const auto s = cli("sweep-profiles buffer-limits");
    CHECK(s.code == 0);
    for (const char* name : {"Skylake", "Haswell", "SandyBridge", "Nehalem", "Prescott"}) CHECK(contains(s.out, name));
    CHECK(cli("sweep-profiles --command flushing --profile haswell --profile skylake").code == 0);
    CHECK(cli("sweep-profiles nonsense").code == 2);
}

TEST_CASE("probe") {
    const auto layout = cli("make-layout --os linux --seed 3 --out layout.json");
    REQUIRE(layout.code == 0);
    const auto l = layout_from_json(slurp(workdir() / "layout.json"));
    const std::string base = hex_string(l.image_base());
    const std::string hole = hex_string(l.image_base() == linux_kaslr::kImageStart ? l.kernel_image_pages.back() + kPage2M
                                                                                  : l.image_base() - kPage2M);
    const auto r = cli("probe --layout layout.json --address " + base + " --address " + hole +
                       " --csv probe.csv --out probe.json");
    CHECK(r.code == 0);
    CHECK(contains(r.out, base + ": mapped (actual mapped)"));
    CHECK(contains(r.out, hole + ": unmapped (actual unmapped)"));
    const Json j = Json::parse(slurp(workdir() / "probe.json"));
    CHECK(j.at("command") == "probe");
    CHECK(j.at("result").at("verdicts").size() == 2);
    CHECK(j.at("result").at("verdicts")[0].at("actually_mapped") == true);
    CHECK(slurp(workdir() / "probe.csv").rfind("address,trial,cycles,verdict\n", 0) == 0);

    const auto prescott = cli("probe --profile prescott --address " + base);
    CHECK(prescott.code == 4);
    const auto nehalem = cli("probe --profile nehalem --technique exhaustion --address " + base);
    CHECK(nehalem.code == 0);
}

TEST_CASE("derandomize") {
    const auto r = cli("derandomize --os windows --decoys --seed 2 --profile skylake --trials 1 --assert-exact");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "image located: yes"));
    CHECK(contains(r.out, "false positives: 0"));
}

TEST_CASE("reports are reproducible") {
    const std::string args = "derandomize --os windows --seed 9 --trials 1 --noise default";
    REQUIRE(cli(args + " --out a.json").code == 0);
    REQUIRE(cli(args + " --out b.json").code == 0);
    const Json a = Json::parse(slurp(workdir() / "a.json"));
    const Json b = Json::parse(slurp(workdir() / "b.json"));
    CHECK(a.contains("volatile"));
    CHECK(strip_volatile(a) == strip_volatile(b));
    REQUIRE(cli("derandomize --os windows --seed 10 --trials 1 --noise default --out c.json").code == 0);
    CHECK_FALSE(strip_volatile(a) == strip_volatile(Json::parse(slurp(workdir() / "c.json"))));
}

TEST_CASE("demo-guard, read-memory and exports") {
    const auto g = cli("demo-guard --profile haswell");
    CHECK(g.code == 0);
    CHECK(contains(g.out, "unguarded leak observed"));
    CHECK(contains(g.out, "guarded   leak not observed"));

    const auto m = cli("read-memory --address 0x30000000 --length 4 --out -");
    CHECK(m.code == 0);
    CHECK(contains(m.out, "\"backing\""));
    CHECK(cli("read-memory --address 0x1234 --length 1").code == 0);

    const auto p = cli("export-profiles --out profiles.txt");
    CHECK(p.code == 0);
    const auto text = slurp(workdir() / "profiles.txt");
    CHECK(contains(text, "[Haswell]"));
    CHECK(cli("detect-predictor --profile profiles.txt").code == 2);
}
