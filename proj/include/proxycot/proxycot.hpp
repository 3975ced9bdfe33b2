#pragma once

#include "proxycot/error.hpp"
#include "proxycot/text.hpp"
#include "proxycot/random.hpp"
#include "proxycot/jsonl.hpp"
#include "proxycot/scoring.hpp"
#include "proxycot/corpus.hpp"
#include "proxycot/longctx.hpp"
#include "proxycot/retrieval.hpp"
#include "proxycot/proxy.hpp"
#include "proxycot/concurrency.hpp"
#include "proxycot/inference.hpp"
#include "proxycot/mock_endpoint.hpp"
#include "proxycot/pipeline.hpp"
#include "proxycot/evalharness.hpp"
#include "proxycot/config.hpp"
#include "proxycot/cli.hpp"
