#pragma once

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/trace.hpp"

#define EXPECT_ERRC(stmt, errc)                                              \
  do {                                                                       \
    bool caught_ = false;                                                    \
    try {                                                                    \
      stmt;                                                                  \
    } catch (const ::fedtput::Error& e_) {                                   \
      caught_ = true;                                                        \
      EXPECT_EQ(e_.code(), errc) << e_.what();                               \
    }                                                                        \
    EXPECT_TRUE(caught_) << "expected " << ::fedtput::errc_name(errc);       \
  } while (0)

namespace testing_support {

// Canonical-schema dataset with the given throughput and constant features.
inline fedtput::TraceDataset flat_trace(const std::vector<double>& tput, const std::string& id = "t") {
  fedtput::TraceDataset ds;
  ds.client_id = id;
  ds.feature_names = fedtput::FeatureSchema::canonical().feature_names;
  ds.features.assign(5, std::vector<double>(tput.size(), 1.0));
  ds.throughput = tput;
  for (std::size_t i = 0; i < tput.size(); ++i) ds.timestamp.push_back(static_cast<double>(i));
  return ds;
}

inline std::vector<double> iota_vec(std::size_t n, double start = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + static_cast<double>(i);
  return v;
}

}  // namespace testing_support
