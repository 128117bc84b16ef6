"""Tool semantics for the four simulated scenarios.

Every operation is a pure function of (part state, arguments): same state
and arguments, same payload and same state mutation. Payload strings are
fixed so trajectory files are byte-stable. Tool names are prefixed with
the owning part key, and the declared argument candidates double as the
finite lattice the search oracle and random policy draw from.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from ..errors import ConfigurationError, ToolExecutionError
from ..registry import ToolRegistry
from ..toolset import ToolSpec
from .base import ScenarioConfig

OpFn = Callable[[dict, dict], str]


@dataclass(frozen=True)
class OpDef:
    description: str
    params: dict
    fn: OpFn
    candidates: tuple = ()
    read_only: bool = False


def _schema(props: dict, required: Optional[Sequence[str]] = None) -> dict:
    schema: dict = {"type": "object", "properties": props}
    if required:
        schema["required"] = list(required)
    return schema


# --------------------------------------------------------------------------
# file
# --------------------------------------------------------------------------

FILE_INITIAL = {"files": {}, "archive": {}, "index": []}
_NAME = {"name": {"type": "string"}}
_NAME_TEXT = {"name": {"type": "string"}, "text": {"type": "string"}}


def _need_file(state: dict, name: str) -> str:
    if name not in state["files"]:
        raise ToolExecutionError(f"no such file: {name}")
    return state["files"][name]


def _file_create(state, args):
    name = args["name"]
    if name in state["files"]:
        raise ToolExecutionError(f"file {name} already exists")
    state["files"][name] = ""
    return f"created {name}"


def _file_write(state, args):
    _need_file(state, args["name"])
    state["files"][args["name"]] = args["text"]
    return f"wrote {len(args['text'])} chars to {args['name']}"


def _file_append(state, args):
    _need_file(state, args["name"])
    state["files"][args["name"]] += args["text"]
    return f"appended {len(args['text'])} chars to {args['name']}"


def _file_read(state, args):
    content = _need_file(state, args["name"])
    return f"contents of {args['name']}: {content}"


def _file_list(state, args):
    names = sorted(state["files"])
    return "files: " + (", ".join(names) if names else "(none)")


def _file_delete(state, args):
    _need_file(state, args["name"])
    del state["files"][args["name"]]
    return f"deleted {args['name']}"


def _file_archive(state, args):
    content = _need_file(state, args["name"])
    state["archive"][args["name"]] = content
    return f"archived {args['name']} ({len(content)} chars)"


def _file_index_add(state, args):
    _need_file(state, args["name"])
    if args["name"] in state["index"]:
        return f"{args['name']} already indexed"
    state["index"].append(args["name"])
    return f"indexed {args['name']}"


def _file_stat(state, args):
    content = _need_file(state, args["name"])
    return f"{args['name']}: {len(content)} chars"


_FILE_NAMES = ({"name": "a.txt"}, {"name": "b.txt"})
_FILE_WRITES = (
    {"name": "a.txt", "text": "alpha"},
    {"name": "b.txt", "text": "beta"},
)

FILE_OPS = {
    "create": OpDef("Create an empty file.", _schema(_NAME, ["name"]), _file_create, _FILE_NAMES),
    "write": OpDef("Overwrite a file with text.", _schema(_NAME_TEXT, ["name", "text"]), _file_write, _FILE_WRITES),
    "append": OpDef("Append text to a file.", _schema(_NAME_TEXT, ["name", "text"]), _file_append),
    "read": OpDef("Read a file's contents.", _schema(_NAME, ["name"]), _file_read, _FILE_NAMES, read_only=True),
    "list": OpDef("List files.", _schema({}), _file_list, ({},), read_only=True),
    "delete": OpDef("Delete a file.", _schema(_NAME, ["name"]), _file_delete, _FILE_NAMES),
    "archive": OpDef("Copy a file's current contents into the archive store.", _schema(_NAME, ["name"]), _file_archive, _FILE_NAMES),
    "index_add": OpDef("Add a file to the searchable index.", _schema(_NAME, ["name"]), _file_index_add, _FILE_NAMES),
    "stat": OpDef("Report a file's size.", _schema(_NAME, ["name"]), _file_stat, _FILE_NAMES, read_only=True),
}


# --------------------------------------------------------------------------
# vehicle
# --------------------------------------------------------------------------

VEHICLE_INITIAL = {
    "engine_on": False,
    "doors_locked": False,
    "windows_closed": False,
    "alarm_armed": False,
    "ac_temp": 20,
    "fuel": 50.0,
    "odometer": 0,
}


def _veh_start(state, args):
    if state["engine_on"]:
        raise ToolExecutionError("engine already running")
    state["engine_on"] = True
    return "engine started"


def _veh_stop(state, args):
    if not state["engine_on"]:
        raise ToolExecutionError("engine is not running")
    state["engine_on"] = False
    return "engine stopped"


def _veh_lock(state, args):
    state["doors_locked"] = True
    return "doors locked"


def _veh_close(state, args):
    state["windows_closed"] = True
    return "windows closed"


def _veh_arm(state, args):
    # Ordering constraint: securing the cabin must precede arming.
    if not (state["doors_locked"] and state["windows_closed"]):
        raise ToolExecutionError("cannot arm alarm: doors and windows must be secured")
    state["alarm_armed"] = True
    return "alarm armed"


def _veh_ac(state, args):
    state["ac_temp"] = args["temp"]
    return f"cabin temperature set to {args['temp']}"


def _veh_refuel(state, args):
    state["fuel"] = min(100.0, state["fuel"] + args["amount"])
    return f"fuel level {state['fuel']:.1f}"


def _veh_drive(state, args):
    if not state["engine_on"]:
        raise ToolExecutionError("engine is off")
    needed = args["distance"] * 0.5
    if state["fuel"] < needed:
        raise ToolExecutionError("insufficient fuel")
    state["fuel"] -= needed
    state["odometer"] += args["distance"]
    return f"drove {args['distance']} km, odometer {state['odometer']}"


def _veh_status(state, args):
    return (
        f"engine {'on' if state['engine_on'] else 'off'}, "
        f"doors {'locked' if state['doors_locked'] else 'unlocked'}, "
        f"windows {'closed' if state['windows_closed'] else 'open'}, "
        f"alarm {'armed' if state['alarm_armed'] else 'off'}, "
        f"ac {state['ac_temp']}, fuel {state['fuel']:.1f}, odometer {state['odometer']}"
    )


VEHICLE_OPS = {
    "start_engine": OpDef("Start the engine.", _schema({}), _veh_start, ({},)),
    "stop_engine": OpDef("Stop the engine.", _schema({}), _veh_stop, ({},)),
    "lock_doors": OpDef("Lock all doors.", _schema({}), _veh_lock, ({},)),
    "close_windows": OpDef("Close all windows.", _schema({}), _veh_close, ({},)),
    "arm_alarm": OpDef("Arm the alarm (doors and windows must be secured first).", _schema({}), _veh_arm, ({},)),
    "set_ac": OpDef(
        "Set cabin temperature.",
        _schema({"temp": {"type": "integer", "enum": [18, 22, 26]}}, ["temp"]),
        _veh_ac,
        ({"temp": 22},),
    ),
    "refuel": OpDef(
        "Add fuel (tank caps at 100).",
        _schema({"amount": {"type": "number", "enum": [10, 20]}}, ["amount"]),
        _veh_refuel,
        ({"amount": 20},),
    ),
    "drive": OpDef(
        "Drive a distance; burns fuel.",
        _schema({"distance": {"type": "integer", "enum": [10]}}, ["distance"]),
        _veh_drive,
        ({"distance": 10},),
    ),
    "status": OpDef("Report vehicle status.", _schema({}), _veh_status, ({},), read_only=True),
}


# --------------------------------------------------------------------------
# trade
# --------------------------------------------------------------------------

TRADE_INITIAL = {"cash": 1000.0, "holdings": {}, "watchlist": [], "alerts": {}}
PRICES = {"AAPL": 100.0, "TSLA": 200.0}
_SYMBOL = {"symbol": {"type": "string", "enum": sorted(PRICES)}}
_SYMBOL_QTY = {
    "symbol": {"type": "string", "enum": sorted(PRICES)},
    "qty": {"type": "integer", "enum": [1, 2]},
}


def _price(symbol: str) -> float:
    if symbol not in PRICES:
        raise ToolExecutionError(f"unknown symbol: {symbol}")
    return PRICES[symbol]


def _trade_quote(state, args):
    # Primary and backup read the same consolidated book, so their payloads
    # are intentionally identical.
    return f"{args['symbol']}: {_price(args['symbol']):.1f} per share"


def _trade_buy(state, args):
    cost = _price(args["symbol"]) * args["qty"]
    if cost > state["cash"]:
        raise ToolExecutionError("insufficient cash")
    state["cash"] -= cost
    state["holdings"][args["symbol"]] = state["holdings"].get(args["symbol"], 0) + args["qty"]
    return f"bought {args['qty']} {args['symbol']} at {_price(args['symbol']):.1f}"


def _trade_sell(state, args):
    held = state["holdings"].get(args["symbol"], 0)
    if held < args["qty"]:
        raise ToolExecutionError(f"not enough {args['symbol']} to sell")
    remaining = held - args["qty"]
    if remaining:
        state["holdings"][args["symbol"]] = remaining
    else:
        del state["holdings"][args["symbol"]]
    state["cash"] += _price(args["symbol"]) * args["qty"]
    return f"sold {args['qty']} {args['symbol']} at {_price(args['symbol']):.1f}"


def _trade_watch(state, args):
    if args["symbol"] in state["watchlist"]:
        return f"{args['symbol']} already watched"
    state["watchlist"].append(args["symbol"])
    return f"watching {args['symbol']}"


def _trade_alert(state, args):
    state["alerts"][args["symbol"]] = True
    return f"alert set for {args['symbol']}"


def _trade_portfolio(state, args):
    held = ", ".join(f"{s}x{q}" for s, q in sorted(state["holdings"].items()))
    return f"cash {state['cash']:.1f}; holdings: {held or 'none'}"


def _trade_deposit(state, args):
    state["cash"] += args["amount"]
    return f"cash balance {state['cash']:.1f}"


_SYMS = ({"symbol": "AAPL"}, {"symbol": "TSLA"})
_BUYS = ({"symbol": "AAPL", "qty": 1}, {"symbol": "TSLA", "qty": 1})

TRADE_OPS = {
    "quote_primary": OpDef("Quote a symbol from the primary feed.", _schema(_SYMBOL, ["symbol"]), _trade_quote, _SYMS, read_only=True),
    "quote_backup": OpDef("Quote a symbol from the backup feed.", _schema(_SYMBOL, ["symbol"]), _trade_quote, _SYMS, read_only=True),
    "buy": OpDef("Buy shares at the listed price.", _schema(_SYMBOL_QTY, ["symbol", "qty"]), _trade_buy, _BUYS),
    "sell": OpDef("Sell held shares.", _schema(_SYMBOL_QTY, ["symbol", "qty"]), _trade_sell, _BUYS),
    "watch": OpDef("Add a symbol to the watchlist.", _schema(_SYMBOL, ["symbol"]), _trade_watch, _SYMS),
    "set_alert": OpDef("Set a price alert for a symbol.", _schema(_SYMBOL, ["symbol"]), _trade_alert, _SYMS),
    "portfolio": OpDef("Report cash and holdings.", _schema({}), _trade_portfolio, ({},), read_only=True),
    "deposit": OpDef(
        "Deposit cash.",
        _schema({"amount": {"type": "number", "enum": [100]}}, ["amount"]),
        _trade_deposit,
        ({"amount": 100},),
    ),
}


# --------------------------------------------------------------------------
# travel
# --------------------------------------------------------------------------

TRAVEL_INITIAL = {"flights": {}, "hotels": {}, "visa": {}, "insurance": {}}
FLIGHT_TIMES = {"PAR": "09:00", "NYC": "14:30"}
WEATHER = {"PAR": "18C, clear", "NYC": "12C, rain"}
_DEST = {"dest": {"type": "string", "enum": sorted(FLIGHT_TIMES)}}
_CITY = {"city": {"type": "string", "enum": sorted(WEATHER)}}


def _tv_search(state, args):
    if args["dest"] not in FLIGHT_TIMES:
        raise ToolExecutionError(f"no flights to {args['dest']}")
    return f"flight to {args['dest']} departs {FLIGHT_TIMES[args['dest']]}"


def _tv_book_flight(state, args):
    if args["dest"] in state["flights"]:
        raise ToolExecutionError(f"flight to {args['dest']} already booked")
    if args["dest"] not in FLIGHT_TIMES:
        raise ToolExecutionError(f"no flights to {args['dest']}")
    state["flights"][args["dest"]] = True
    return f"booked flight to {args['dest']}"


def _tv_cancel_flight(state, args):
    if args["dest"] not in state["flights"]:
        raise ToolExecutionError(f"no booking for {args['dest']}")
    del state["flights"][args["dest"]]
    return f"cancelled flight to {args['dest']}"


def _tv_book_hotel(state, args):
    state["hotels"][args["city"]] = args["nights"]
    return f"booked {args['nights']} nights in {args['city']}"


def _tv_visa(state, args):
    state["visa"][args["dest"]] = True
    return f"visa application filed for {args['dest']}"


def _tv_insurance(state, args):
    state["insurance"][args["dest"]] = True
    return f"travel insurance purchased for {args['dest']}"


def _tv_weather(state, args):
    # Both weather endpoints resolve to the same meteorological source.
    if args["city"] not in WEATHER:
        raise ToolExecutionError(f"no forecast for {args['city']}")
    return f"{args['city']}: {WEATHER[args['city']]}"


_DESTS = ({"dest": "PAR"}, {"dest": "NYC"})
_CITIES = ({"city": "PAR"}, {"city": "NYC"})
_HOTELS = ({"city": "PAR", "nights": 2}, {"city": "NYC", "nights": 2})

TRAVEL_OPS = {
    "search_flights": OpDef("Look up the departure time for a destination.", _schema(_DEST, ["dest"]), _tv_search, _DESTS, read_only=True),
    "book_flight": OpDef("Book a flight.", _schema(_DEST, ["dest"]), _tv_book_flight, _DESTS),
    "cancel_flight": OpDef("Cancel a booked flight.", _schema(_DEST, ["dest"]), _tv_cancel_flight, _DESTS),
    "book_hotel": OpDef(
        "Book a hotel stay.",
        _schema({**_CITY, "nights": {"type": "integer", "enum": [2]}}, ["city", "nights"]),
        _tv_book_hotel,
        _HOTELS,
    ),
    "apply_visa": OpDef("File a visa application for a destination.", _schema(_DEST, ["dest"]), _tv_visa, _DESTS),
    "buy_insurance": OpDef("Purchase travel insurance for a destination.", _schema(_DEST, ["dest"]), _tv_insurance, _DESTS),
    "weather_main": OpDef("Forecast from the main weather endpoint.", _schema(_CITY, ["city"]), _tv_weather, _CITIES, read_only=True),
    "weather_alt": OpDef("Forecast from the alternate weather endpoint.", _schema(_CITY, ["city"]), _tv_weather, _CITIES, read_only=True),
}


# --------------------------------------------------------------------------
# Assembly
# --------------------------------------------------------------------------

OP_TABLES = {
    "file": FILE_OPS,
    "vehicle": VEHICLE_OPS,
    "trade": TRADE_OPS,
    "travel": TRAVEL_OPS,
}

INITIAL_STATES = {
    "file": FILE_INITIAL,
    "vehicle": VEHICLE_INITIAL,
    "trade": TRADE_INITIAL,
    "travel": TRAVEL_INITIAL,
}


def build_scenario(
    scenario: str,
    instance: str = "",
    include: Optional[Sequence[str]] = None,
    candidates: Optional[dict] = None,
    initial_state: Optional[dict] = None,
) -> ScenarioConfig:
    """Configure one scenario instance.

    `include` restricts the exposed operations (benchmark tasks pin their
    tool surface); `candidates` overrides per-op argument lattices, which
    keeps the search oracle's branching factor under control.
    """
    if scenario not in OP_TABLES:
        raise ConfigurationError(f"unknown scenario {scenario!r}")
    ops = OP_TABLES[scenario]
    unknown = set(include or ()) - set(ops)
    if unknown:
        raise ConfigurationError(f"{scenario}: unknown operations {sorted(unknown)}")
    part_key = f"{scenario}_{instance}" if instance else scenario

    state = initial_state if initial_state is not None else INITIAL_STATES[scenario]
    missing = set(INITIAL_STATES[scenario]) - set(state)
    if missing:
        raise ConfigurationError(f"{scenario}: initial state lacks keys {sorted(missing)}")

    tools = []
    for op, opdef in ops.items():
        if include is not None and op not in include:
            continue
        cands = (candidates or {}).get(op, opdef.candidates)
        tools.append(
            ToolSpec(
                name=f"{part_key}.{op}",
                description=opdef.description,
                param_schema=opdef.params,
                impl_key=f"{part_key}.{op}",
                domain_tag=part_key,
                arg_candidates=tuple(cands),
            )
        )
    return ScenarioConfig(
        scenario=scenario,
        instance=instance,
        initial_state=dict(state),
        exposed_tools=tuple(tools),
    )


def bind_implementations(part: ScenarioConfig, part_state: dict, registry: ToolRegistry) -> None:
    """Register closures over this part's live state for every exposed tool."""
    ops = OP_TABLES[part.scenario]
    for tool in part.exposed_tools:
        op = tool.name.split(".", 1)[1]
        fn = ops[op].fn

        def impl(args: dict, _fn: OpFn = fn) -> str:
            return _fn(part_state, args)

        registry.register(tool.impl_key, impl)
