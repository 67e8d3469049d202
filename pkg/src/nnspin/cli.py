"""Thin command-line client for the pipeline service.

By default each command talks to an in-process instance of the FastAPI
app; pass ``--server URL`` to target a running ``nnspin serve``
instance instead.  Exit codes: 0 success, 2 usage/config, 3
convergence, 4 integration, 5 fit, 6 dependency.
"""

import json
import sys

import click

from .errors import ConfigError
from .pipeline import RunConfig


def _client(server):
    if server:
        import httpx
        return httpx.Client(base_url=server, timeout=None)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    from .service import create_app
    return TestClient(create_app())


def _build_config(config_path, overrides, out, seed):
    config = RunConfig.from_file(config_path) if config_path else RunConfig()
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs.append((key, value))
    if out:
        pairs.append(("output_dir", out))
    if seed is not None:
        pairs.extend([("pulse.rng_seed", str(seed)),
                      ("simulation.rng_seed", str(seed)),
                      ("analysis.rng_seed", str(seed))])
    if pairs:
        config = config.with_overrides(pairs)
    return config


def _post(server, path, payload):
    try:
        with _client(server) as client:
            response = client.post(path, json=payload)
    except Exception as exc:   # connection problems, bad URL
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(1)
    body = response.json()
    if response.status_code >= 400:
        click.echo(f"error: {body.get('error', response.text)}", err=True)
        sys.exit(int(body.get("exit_code", 1)))
    click.echo(json.dumps(body, indent=2, sort_keys=True))


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="JSON run configuration")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="override a config field (dotted path)")(fn)
    fn = click.option("--out", default=None, help="output directory")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="set all RNG seeds at once")(fn)
    fn = click.option("--force", is_flag=True, help="re-run cached stages")(fn)
    fn = click.option("--server", default=None, metavar="URL",
                      help="remote service URL (default: in-process)")(fn)
    return fn


@click.group()
def main():
    """Two-neutron spin simulation pipeline."""


def _stage_command(name, path, extra=None):
    @_common
    def command(config_path, overrides, out, seed, force, server, **kwargs):
        try:
            config = _build_config(config_path, overrides, out, seed)
        except ConfigError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        payload = {"config": config.model_dump(), "force": force}
        payload.update(kwargs)
        _post(server, path, payload)

    command.__name__ = name.replace("-", "_")
    return command


hamiltonian = main.command("hamiltonian")(_stage_command("hamiltonian",
                                                         "/stages/hamiltonian"))

pulse = main.command("pulse")(
    click.option("--power", type=click.Choice(["1", "3"]), default="1",
                 callback=lambda ctx, param, v: int(v))(
        _stage_command("pulse", "/stages/pulse")))

simulate = main.command("simulate")(
    click.option("--power", type=click.Choice(["1", "3"]), default="1",
                 callback=lambda ctx, param, v: int(v))(
        _stage_command("simulate", "/stages/simulate")))

analyze = main.command("analyze")(_stage_command("analyze", "/stages/analyze"))

run_all = main.command("run-all")(_stage_command("run-all", "/run-all"))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the pipeline service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
