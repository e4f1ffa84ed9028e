#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "gda/pipeline.hpp"

using namespace gda;
namespace fs = std::filesystem;

namespace {

struct DeskRun {
  LabeledSet source_test, target_test;
  ModelBundle bundle;
  AdaptResult adapted;
};

// 400-sample source and dark target domains, 10 source epochs, 200 adaptation steps.
DeskRun& desk() {
  static DeskRun run = [] {
    const fs::path dir = fs::temp_directory_path() / "gda_test_desk";
    fs::remove_all(dir);
    DomainSpec src{"source", {}, 400, 0.25, 11};
    DomainSpec tgt{"target", {}, 400, 0.25, 22};
    tgt.style.gain = {0.07, 0.07, 0.07};
    const DatasetManifest ms = generate_domain_dataset(src, dir / "source");
    const DatasetManifest mt = generate_domain_dataset(tgt, dir / "target");
    TrainConfig c;
    c.batch_size = 16;
    c.source_epochs = 10;
    c.source_lr = 1e-3;
    c.adapt_steps = 200;
    c.lr = 5e-3;
    ModelBundle b = train_source(c, load_labeled(ms.split("train"))).bundle;
    AdaptResult a = adapt_generator(c, b, load_unlabeled(mt.split("train").without_labels()));
    return DeskRun{load_labeled(ms.split("test")), load_labeled(mt.split("test")), std::move(b), std::move(a)};
  }();
  return run;
}

double mean_stat(const std::vector<AdaptLogRow>& log, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += log[i].loss.stat;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST(DeskScale, SourceDataMatchesStoredStatistics) {
  DeskRun& d = desk();
  const auto src = bn_discrepancy(d.bundle, d.source_test.images, nullptr);
  const auto tgt = bn_discrepancy(d.bundle, d.target_test.images, nullptr);
  ASSERT_EQ(src.size(), tgt.size());
  for (std::size_t l = 0; l < src.size(); ++l) {
    EXPECT_LT(src[l].d_mean, 0.1) << src[l].layer;
    EXPECT_LT(src[l].d_mean, 0.2 * tgt[l].d_mean) << src[l].layer;
  }
}

TEST(DeskScale, StatLossTrendsDown) {
  const auto& log = desk().adapted.log;
  ASSERT_EQ(log.size(), 200u);
  EXPECT_LT(mean_stat(log, 150, 200), mean_stat(log, 0, 50));
}

TEST(DeskScale, StylizedTargetIsCloserInBnStatistics) {
  DeskRun& d = desk();
  auto avg = [](const std::vector<BnCurvePoint>& c) {
    return std::accumulate(c.begin(), c.end(), 0.0, [](double s, const BnCurvePoint& p) { return s + p.d_mean; }) /
           static_cast<double>(c.size());
  };
  EXPECT_LE(avg(bn_discrepancy(d.bundle, d.target_test.images, &d.adapted.generator)),
            avg(bn_discrepancy(d.bundle, d.target_test.images, nullptr)));
}
