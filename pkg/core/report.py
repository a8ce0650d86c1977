import os
from typing import Any, Dict, List, Tuple

import pandas as pd

from config import Config
from utils.error_handler import DatasetError
from utils.logging import setup_logger

logger = setup_logger('report')

KEY_COLUMNS = ['mechanism', 'setting', 'n', 'm']
MISSING = '-'


def result_row(mechanism: str, setting: str, n: int, m: int, revenue: float,
               regret: float, samples: int, seed: int) -> Dict[str, Any]:
    return {
        'mechanism': mechanism,
        'setting': setting,
        'n': int(n),
        'm': int(m),
        'revenue': float(revenue),
        'regret': float(regret),
        'samples': int(samples),
        'seed': int(seed),
    }


def append_result(path: str, row: Dict[str, Any]) -> None:
    """Append one row to the results CSV, creating it with the versioned header line"""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'a', newline='') as f:
            if new_file:
                f.write(Config.results_header() + '\n')
            pd.DataFrame([row], columns=Config.RESULTS_COLUMNS).to_csv(f, header=new_file, index=False)
    except OSError as e:
        raise DatasetError(f'Could not append to results CSV: {e}', path) from e


def read_results(path: str) -> pd.DataFrame:
    try:
        with open(path) as f:
            first = f.readline().strip()
    except OSError as e:
        raise DatasetError(f'Could not read results CSV: {e}', path) from e
    if first != Config.results_header():
        raise DatasetError(f'Unexpected results header {first!r}, expected {Config.results_header()!r}', path)
    try:
        df = pd.read_csv(path, skiprows=1)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f'Malformed results CSV: {e}', path) from e
    missing = [c for c in Config.RESULTS_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f'Results CSV is missing columns {missing}', path)
    if df.empty:
        raise DatasetError('Results CSV has no rows', path)
    return df


def deduplicate(df: pd.DataFrame) -> pd.DataFrame:
    """Keep the latest row per (mechanism, setting, n, m)"""
    duplicated = df.duplicated(subset=KEY_COLUMNS, keep='last')
    for _, row in df[duplicated].iterrows():
        logger.warning(f'Duplicate result for {row["mechanism"]} {row["setting"]} '
                       f'{row["n"]}x{row["m"]}; keeping the latest row')
    return df[~duplicated].reset_index(drop=True)


def build_table(df: pd.DataFrame) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Pivot to mechanisms x 'setting nxm' columns; returns (revenue, regret) frames"""
    df = deduplicate(df).copy()
    df['column'] = df['setting'].astype(str) + ' ' + df['n'].astype(str) + 'x' + df['m'].astype(str)
    mechanisms = list(dict.fromkeys(df['mechanism']))
    columns = sorted(dict.fromkeys(df['column']))
    revenue = df.pivot(index='mechanism', columns='column', values='revenue').reindex(
        index=mechanisms, columns=columns)
    regret = df.pivot(index='mechanism', columns='column', values='regret').reindex(
        index=mechanisms, columns=columns)
    return revenue, regret


def format_table(revenue: pd.DataFrame, regret: pd.DataFrame, bold: bool = True) -> pd.DataFrame:
    """String cells 'Rev' and 'Rgt' per column; best revenue per column bolded"""
    best = revenue.max(axis=0)
    cells: Dict[Tuple[str, str], List[str]] = {}
    for column in revenue.columns:
        rev_cells, rgt_cells = [], []
        for mechanism in revenue.index:
            rev = revenue.at[mechanism, column]
            rgt = regret.at[mechanism, column]
            if pd.isna(rev):
                rev_cells.append(MISSING)
            else:
                text = f'{rev:.3f}'
                rev_cells.append(f'**{text}**' if bold and rev == best[column] else text)
            rgt_cells.append(MISSING if pd.isna(rgt) else f'{rgt:.4f}')
        cells[(column, 'Rev')] = rev_cells
        cells[(column, 'Rgt')] = rgt_cells
    table = pd.DataFrame(cells, index=revenue.index)
    table.index.name = 'mechanism'
    return table


def render_markdown(table: pd.DataFrame) -> str:
    headers = ['Mechanism'] + [f'{column} {metric}' for column, metric in table.columns]
    lines = [
        '| ' + ' | '.join(headers) + ' |',
        '|' + '|'.join(['---'] * len(headers)) + '|',
    ]
    for mechanism, row in table.iterrows():
        lines.append('| ' + ' | '.join([str(mechanism)] + list(row.values)) + ' |')
    return '\n'.join(lines) + '\n'


def write_report(results_path: str, output_dir: str) -> Tuple[str, str]:
    """Render the results CSV as report.md and report.csv under ``output_dir``"""
    revenue, regret = build_table(read_results(results_path))
    markdown = render_markdown(format_table(revenue, regret))
    flat = format_table(revenue, regret, bold=False)
    flat.columns = [f'{column} {metric}' for column, metric in flat.columns]
    md_path = os.path.join(output_dir, 'report.md')
    csv_path = os.path.join(output_dir, 'report.csv')
    try:
        os.makedirs(output_dir, exist_ok=True)
        with open(md_path, 'w') as f:
            f.write(markdown)
        flat.to_csv(csv_path)
    except OSError as e:
        raise DatasetError(f'Could not write report: {e}', output_dir) from e
    logger.info(f'Report with {len(revenue)} mechanisms x {len(revenue.columns)} columns written to {md_path}')
    return md_path, csv_path
