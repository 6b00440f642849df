#pragma once

#include "reid/common.hpp"
#include "reid/corpus.hpp"
#include "reid/io.hpp"
#include "reid/metrics.hpp"
#include "reid/pca.hpp"
#include "reid/probes.hpp"
#include "reid/subspace.hpp"
#include "reid/synth.hpp"
