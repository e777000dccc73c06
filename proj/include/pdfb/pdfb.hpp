#pragma once

#include "pdfb/accel.hpp"
#include "pdfb/bench.hpp"
#include "pdfb/bundle.hpp"
#include "pdfb/errors.hpp"
#include "pdfb/fb.hpp"
#include "pdfb/linops.hpp"
#include "pdfb/prox.hpp"
#include "pdfb/rng.hpp"
#include "pdfb/saddle.hpp"
#include "pdfb/shard.hpp"
#include "pdfb/stoch.hpp"
#include "pdfb/trace.hpp"
#include "pdfb/types.hpp"
