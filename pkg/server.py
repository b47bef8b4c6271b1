import asyncio
from fastmcp import FastMCP
from mrcine.data_server import data_server
from mrcine.recon_server import recon_server
from mrcine.pipeline_resources import pipeline_resources_server

# Initialize the main FastMCP server
mcp: FastMCP = FastMCP("Mrcine Cine Reconstruction Server", dependencies=["numpy", "scipy", "torch"])


async def setup_server():
    """Set up the main server by importing sub-servers."""
    # Phantom, mask and calibration tools (prefixed with "data_")
    await mcp.import_server(data_server, "data")

    # Reconstruction and evaluation tools (prefixed with "recon_")
    await mcp.import_server(recon_server, "recon")

    # Defaults resource and workflow prompt
    await mcp.import_server(pipeline_resources_server)


# Initialize server setup at module level for testing
asyncio.run(setup_server())

if __name__ == "__main__":
    mcp.run()
