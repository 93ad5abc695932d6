#pragma once

#include "c3ot/error.hpp"
#include "c3ot/text.hpp"
#include "c3ot/corpus.hpp"
#include "c3ot/backend.hpp"
#include "c3ot/backend_http.hpp"
#include "c3ot/compressor.hpp"
#include "c3ot/conditioner.hpp"
#include "c3ot/metrics.hpp"
#include "c3ot/oracle.hpp"
#include "c3ot/adaptive.hpp"
#include "c3ot/harness.hpp"
