"""Pytest configuration and fixtures for mrcine tests."""

import numpy as np
import pytest
import pytest_asyncio
from fastmcp import FastMCP, Client

from config import PhantomConfig, config
from mrcine.data_server import data_server
from mrcine.phantom import generate_phantom
from mrcine.pipeline_resources import pipeline_resources_server
from mrcine.recon_server import recon_server
from mrcine.utils import container_cache


@pytest_asyncio.fixture
async def mcp_server():
    """Create a test MCP server with every sub-server imported."""
    server = FastMCP("Mrcine Test Server")

    # Import sub-servers like the main server does
    await server.import_server(data_server, "data")
    await server.import_server(recon_server, "recon")
    await server.import_server(pipeline_resources_server)

    return server


@pytest_asyncio.fixture
async def client(mcp_server):
    """Create a client connected to the test server."""
    async with Client(mcp_server) as client:
        yield client


@pytest.fixture(autouse=True)
def restore_runtime():
    """Undo runtime changes made by a test and drop cached containers."""
    saved = (config.runtime.precision, config.runtime.deterministic, config.runtime.threads)
    yield
    config.runtime.precision, config.runtime.deterministic, config.runtime.threads = saved
    container_cache.clear()


@pytest.fixture
def double_precision():
    """Run the test with complex128 / float64 arithmetic."""
    config.runtime.precision = "double"
    yield
    config.runtime.precision = "single"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_phantom_config():
    return PhantomConfig(nx=32, ny=32, nframes=8, ncoils=4, seed=3, motion_amplitude=0.2)


@pytest.fixture
def small_phantom(small_phantom_config):
    return generate_phantom(small_phantom_config)
