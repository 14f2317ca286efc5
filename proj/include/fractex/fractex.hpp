#pragma once

#include "fractex/dense.hpp"
#include "fractex/error.hpp"
#include "fractex/expander.hpp"
#include "fractex/ingest.hpp"
#include "fractex/manifest.hpp"
#include "fractex/reducer.hpp"
#include "fractex/rng.hpp"
#include "fractex/shard_io.hpp"
#include "fractex/sparse.hpp"
#include "fractex/spectral.hpp"
#include "fractex/stats.hpp"
#include "fractex/verify.hpp"
