#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mfqe/checkpoint.hpp"
#include "mfqe/cli.hpp"
#include "mfqe/video_io.hpp"

namespace fs = std::filesystem;
using mfqe::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result mfqe_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("mfqe_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream s(text);
  for (std::string l; std::getline(s, l);) v.push_back(l);
  return v;
}

void write(const std::string& p, const std::string& text) { std::ofstream(p) << text; }

// Two 32x32 raw/compressed pairs.
void make_pairs(const TempDir& d, int frames = 12) {
  for (int i = 0; i < 2; ++i) {
    const auto n = std::to_string(i);
    REQUIRE(mfqe_run({"synth", "--out", d / ("r" + n + ".y4m"), "--sim.width", "32", "--sim.height", "32",
                      "--sim.frames", std::to_string(frames), "--sim.texture_seed", std::to_string(7 + i),
                      "--sim.dx", i ? "-0.8" : "1.1"})
                .code == 0);
    REQUIRE(mfqe_run({"degrade", "--in", d / ("r" + n + ".y4m"), "--out", d / ("c" + n + ".y4m")}).code == 0);
  }
}

}  // namespace

TEST_CASE("usage errors exit with 1 and help exits with 0") {
  CHECK(mfqe_run({}).code == mfqe::cli::kExitUsage);
  const auto unknown = mfqe_run({"frobnicate"});
  CHECK(unknown.code == mfqe::cli::kExitUsage);
  CHECK(unknown.err.find("frobnicate") != std::string::npos);
  const auto help = mfqe_run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("train-mfcnn") != std::string::npos);
  const auto sub = mfqe_run({"train-mfcnn", "--help"});
  CHECK(sub.code == 0);
  CHECK(sub.out.find("--train.lr") != std::string::npos);
  CHECK(sub.out.find("[0.0001]") != std::string::npos);
  CHECK(mfqe_run({"synth"}).code == mfqe::cli::kExitUsage);
  CHECK(mfqe_run({"synth", "--out", "x.y4m", "--sim.width", "abc"}).code == mfqe::cli::kExitUsage);
  CHECK(mfqe_run({"degrade", "--in", "a", "--out", "b", "--no-such-flag"}).code == mfqe::cli::kExitUsage);
}

TEST_CASE("synth and degrade write readable clips and never overwrite inputs") {
  TempDir d("synth");
  make_pairs(d);
  const auto raw = mfqe::read_y4m_file(d / "r0.y4m");
  CHECK(raw.size() == 12);
  CHECK(raw.width() == 32);
  const auto before = slurp(d / "r0.y4m");
  const auto r = mfqe_run({"degrade", "--in", d / "r0.y4m", "--out", d / "r0.y4m"});
  CHECK(r.code == mfqe::cli::kExitUsage);
  CHECK(slurp(d / "r0.y4m") == before);
}

TEST_CASE("config files fill options and command-line flags override them") {
  TempDir d("config");
  write(d / "a.cfg", "# synthetic clip\nsim.width = 24\nsim.height = 16   # trailing comment\nsim.frames = 9\n\n");
  const auto r = mfqe_run({"synth", "--config", d / "a.cfg", "--out", d / "x.y4m", "--sim.frames", "6"});
  REQUIRE(r.code == 0);
  const auto clip = mfqe::read_y4m_file(d / "x.y4m");
  CHECK(clip.width() == 24);
  CHECK(clip.height() == 16);
  CHECK(clip.size() == 6);

  write(d / "bad.cfg", "sim.widht = 24\n");
  const auto bad = mfqe_run({"synth", "--config", d / "bad.cfg", "--out", d / "y.y4m"});
  CHECK(bad.code == mfqe::cli::kExitUsage);
  CHECK(bad.err.find("sim.widht") != std::string::npos);
  write(d / "syntax.cfg", "sim.width 24\n");
  CHECK(mfqe_run({"synth", "--config", d / "syntax.cfg", "--out", d / "y.y4m"}).code == mfqe::cli::kExitUsage);
  CHECK(mfqe_run({"synth", "--config", d / "missing.cfg", "--out", d / "y.y4m"}).code == mfqe::cli::kExitUsage);
}

TEST_CASE("malformed inputs exit with 2") {
  TempDir d("bad");
  write(d / "junk.y4m", "not a video\n");
  CHECK(mfqe_run({"features", "--in", d / "junk.y4m", "--out", d / "f.csv"}).code == mfqe::cli::kExitData);
  CHECK(mfqe_run({"features", "--in", d / "absent.y4m", "--out", d / "f.csv"}).code == mfqe::cli::kExitData);
  make_pairs(d, 6);
  CHECK(mfqe_run({"detect", "--model", d / "r0.y4m", "--cmp", d / "c0.y4m", "--out", d / "d.csv"}).code ==
        mfqe::cli::kExitData);
}

TEST_CASE("analyze and features write the documented tables") {
  TempDir d("analyze");
  make_pairs(d);
  const auto a = mfqe_run({"analyze", "--raw", d / "r0.y4m", "--cmp", d / "c0.y4m", "--out", d / "rep"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("STD ") != std::string::npos);
  const auto rows = lines_of(slurp(d / "rep/curve.csv"));
  REQUIRE(rows.size() == 13);
  CHECK(rows[0] == "frame,psnr_in,psnr_out,is_pqf_pred,is_pqf_true");
  CHECK(rows[1].rfind("0,", 0) == 0);
  CHECK(rows[1].find(",,,") != std::string::npos);  // no enhanced clip and no prediction
  CHECK(slurp(d / "rep/curve.svg").find("<polyline") != std::string::npos);

  REQUIRE(mfqe_run({"features", "--in", d / "c0.y4m", "--out", d / "f.csv"}).code == 0);
  const auto f = lines_of(slurp(d / "f.csv"));
  REQUIRE(f.size() == 13);
  for (const auto& l : f) CHECK(std::count(l.begin(), l.end(), ',') == 179);
}

TEST_CASE("detector, enhancement network and evaluation run end to end") {
  TempDir d("pipeline");
  make_pairs(d);
  const std::vector<std::string> pairs{"--raw", d / "r0.y4m", d / "r1.y4m", "--cmp", d / "c0.y4m", d / "c1.y4m"};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
    head.insert(head.end(), pairs.begin(), pairs.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  REQUIRE(mfqe_run(with({"train-detector"}, {"--out", d / "det.ckpt"})).code == 0);

  const auto missing = mfqe_run({"detect", "--cmp", d / "c0.y4m", "--out", d / "d.csv"});
  CHECK(missing.code == mfqe::cli::kExitUsage);
  CHECK(missing.err.find("--model") != std::string::npos);
  const auto det =
      mfqe_run({"detect", "--model", d / "det.ckpt", "--cmp", d / "c0.y4m", "--raw", d / "r0.y4m", "--out", d / "d.csv"});
  REQUIRE(det.code == 0);
  CHECK(det.out.find("F1") != std::string::npos);
  CHECK(lines_of(slurp(d / "d.csv")).size() == 13);

  write(d / "toy.cfg",
        "train.steps = 6\ntrain.sf_steps = 3\ntrain.batch = 2\ntrain.patch = 16\ntrain.stride = 16\n"
        "train.window = 2\nmc.reduction = 8\nqe.reduction = 8\n");
  const std::vector<std::string> train_tail{"--config", d / "toy.cfg", "--detector", d / "det.ckpt", "--seed", "3"};
  auto t1 = with({"train-mfcnn"}, train_tail);
  t1.insert(t1.end(), {"--out", d / "m1.ckpt", "--report", d / "loss.csv"});
  REQUIRE(mfqe_run(t1).code == 0);
  auto t2 = with({"train-mfcnn"}, train_tail);
  t2.insert(t2.end(), {"--out", d / "m2.ckpt"});
  REQUIRE(mfqe_run(t2).code == 0);
  CHECK(slurp(d / "m1.ckpt") == slurp(d / "m2.ckpt"));
  const auto loss = lines_of(slurp(d / "loss.csv"));
  REQUIRE(loss.size() == 7);
  CHECK(loss[0] == "step,l_mc,l_qe,total,phase");
  CHECK(mfqe::has_svm(mfqe::Checkpoint::load(d / "m1.ckpt")));

  const auto enh = mfqe_run({"enhance", "--model", d / "m1.ckpt", "--cmp", d / "c0.y4m", "--out", d / "e.y4m",
                             "--provenance", d / "prov.csv", "--workers", "2"});
  REQUIRE(enh.code == 0);
  const auto prov = lines_of(slurp(d / "prov.csv"));
  REQUIRE(prov.size() == 13);
  CHECK(prov[0] == "frame,provenance,is_pqf_pred");
  const auto e = mfqe::read_y4m_file(d / "e.y4m");
  const auto c = mfqe::read_y4m_file(d / "c0.y4m");
  CHECK(e.size() == c.size());
  CHECK(e.width() == c.width());

  const auto ev = mfqe_run({"eval", "--raw", d / "r0.y4m", "--cmp", d / "c0.y4m", "--enh", d / "e.y4m", "--out",
                            d / "ev", "--model", d / "det.ckpt"});
  REQUIRE(ev.code == 0);
  const auto summary = nlohmann::json::parse(slurp(d / "ev/summary.json"));
  CHECK(summary["frames"] == 12);
  CHECK(summary["delta_psnr"].contains("non_pqf"));
  const auto curve = lines_of(slurp(d / "ev/curve.csv"));
  REQUIRE(curve.size() == 13);
  CHECK(std::count(curve[1].begin(), curve[1].end(), ',') == 4);
  CHECK(curve[1].find(",,") == std::string::npos);  // every column filled
}

TEST_CASE("divergence exits with 3 and leaves a dump") {
  TempDir d("diverge");
  make_pairs(d);
  const auto r = mfqe_run({"train-mfcnn", "--raw", d / "r0.y4m", "--cmp", d / "c0.y4m", "--out", d / "m.ckpt",
                           "--train.steps", "40", "--train.sf_steps", "0", "--train.lr", "1e30", "--train.patch", "16",
                           "--train.stride", "16", "--mc.reduction", "8", "--qe.reduction", "8"});
  CHECK(r.code == mfqe::cli::kExitNumerical);
  CHECK(r.err.find("non-finite") != std::string::npos);
  CHECK(fs::exists(d / "m.diverged.ckpt"));
  CHECK_FALSE(fs::exists(d / "m.ckpt"));
}

TEST_CASE("gradcheck reports one row per op and precision") {
  const auto r = mfqe_run({"gradcheck", "--instances", "1"});
  CHECK(r.code == 0);
  const auto rows = lines_of(r.out);
  CHECK(rows.size() == 24);
  for (const auto& l : rows) CHECK(l.find(" ok") != std::string::npos);
}
