# Custom CSS styles for the segmentation demo

RESULT_CSS = """
.result-card {
    background: linear-gradient(135deg, #2d6a4f 0%, #40916c 100%);
    border-radius: 16px;
    padding: 20px;
    margin: 16px 0;
    color: white;
    box-shadow: 0 8px 32px rgba(0,0,0,0.1);
}
.result-error {
    background: linear-gradient(135deg, #e74c3c 0%, #c0392b 100%);
    border-radius: 12px;
    padding: 20px;
    margin: 16px 0;
    color: white;
    box-shadow: 0 4px 16px rgba(231, 76, 60, 0.3);
}
.result-caveat {
    font-size: 13px;
    color: rgba(255,255,255,0.85);
    margin-top: 12px;
}
"""

METRIC_CSS = """
.metric-table {
    width: 100%;
    border-collapse: collapse;
    margin-top: 8px;
}
.metric-table th, .metric-table td {
    padding: 8px 12px;
    text-align: center;
    border-bottom: 1px solid rgba(255,255,255,0.25);
    font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
}
.metric-table th {
    font-weight: 600;
}
"""

MAIN_CSS = """
.main-container {
    max-width: 960px;
    margin: 0 auto;
}
.status-placeholder {
    border-radius: 12px;
    padding: 20px;
    margin: 16px 0;
    text-align: center;
    height: 80px;
    display: flex;
    align-items: center;
    justify-content: center;
    border: 1px dashed #ccc;
    color: #888;
}
"""


def get_custom_css() -> str:
    """Get all custom CSS styles combined"""
    return MAIN_CSS + RESULT_CSS + METRIC_CSS
