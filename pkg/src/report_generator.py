import io
from datetime import datetime

try:
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import letter
    from reportlab.platypus import SimpleDocTemplate, Table, TableStyle, Paragraph, Spacer
    from reportlab.lib.styles import getSampleStyleSheet
    HAS_REPORTLAB = True
except ImportError:
    HAS_REPORTLAB = False

from src.models import EvalReport


def generate_pdf_report(report: EvalReport, run_id: str = "") -> bytes:
    """
    Renders a benchmark report as PDF.
    Returns the PDF bytes, or b"" when reportlab is not installed.
    """
    if not HAS_REPORTLAB:
        return b""

    buffer = io.BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=letter)
    elements = []
    styles = getSampleStyleSheet()
    normal_style = styles['Normal']
    h2_style = styles['Heading2']

    # --- Title Section ---
    elements.append(Paragraph("Diverse M-Best Benchmark", styles['Title']))
    if run_id:
        elements.append(Paragraph(f"Run ID: {run_id}", normal_style))
    elements.append(Paragraph(f"Date: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", normal_style))
    elements.append(Spacer(1, 12))

    # --- Suite Summary ---
    suite = report.suite
    elements.append(Paragraph("Suite", h2_style))
    summary_text = f"<b>Grid:</b> {suite.height}x{suite.width}, {suite.num_labels} labels, sigma {suite.sigma}<br/>"
    summary_text += f"<b>Seeds:</b> {len(report.validation_seeds)} validation, {len(report.test_seeds)} test<br/>"
    summary_text += f"<b>Metric:</b> {suite.metric.value}, M = {suite.M}<br/>"
    elements.append(Paragraph(summary_text, normal_style))
    elements.append(Spacer(1, 12))

    # --- Oracle Curves ---
    elements.append(Paragraph("Oracle Accuracy", h2_style))
    header = ["Method"] + [f"M={m}" for m in range(1, suite.M + 1)] + ["Corpus IoU"]
    table_data = [header]
    failing_rows = []
    for i, summary in enumerate(report.methods, start=1):
        corpus = "-" if summary.corpus_iou is None else f"{summary.corpus_iou:.3f}"
        table_data.append(
            [summary.method] + [f"{v:.3f}" for v in summary.oracle_curve] + [corpus]
        )
        if not all(report.acceptance.get(summary.method, {}).values()):
            failing_rows.append(i)

    t_style = TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#262730')),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
        ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 8),
        ('BOTTOMPADDING', (0, 0), (-1, 0), 8),
        ('BACKGROUND', (0, 1), (-1, -1), colors.white),
        ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
    ])
    # Methods missing an acceptance property are shown in red.
    for i in failing_rows:
        t_style.add('TEXTCOLOR', (0, i), (-1, i), colors.red)

    t = Table(table_data)
    t.setStyle(t_style)
    elements.append(t)
    elements.append(Spacer(1, 12))

    # --- Tuned Parameters ---
    elements.append(Paragraph("Tuned Parameters", h2_style))
    params_text = "".join(
        f"<b>{s.method}:</b> {s.params or '-'}<br/>" for s in report.methods
    )
    elements.append(Paragraph(params_text, normal_style))

    doc.build(elements)
    return buffer.getvalue()
